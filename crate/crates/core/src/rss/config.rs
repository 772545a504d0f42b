//! The deployable RSS configuration and its text file format.
//!
//! ```text
//! # rss-config v1
//! cores 16
//! provenance mode=shared-nothing constraints=5c0d2a1f00e4b7a3 seed=42
//! interface 0
//! fieldset ipv4-tcp-udp ipv4_src ipv4_dst l4_src l4_dst
//! key 6d5a56da...            (2 hex digits per byte, byte 0 first)
//! table 0 1 2 3 ...          (core id of entry 0, 1, ...)
//! end
//! ```
//!
//! Key bit 0 is the most significant bit of key byte 0. The hash input is the
//! listed fields concatenated in the listed (canonical) order, each in network
//! byte order, and the table entry used is `hash & (entries - 1)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{Field, IfaceId};

use super::{FieldSet, IndirectionTable, InterfaceRss, RssEngine, RssKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceConfig {
    pub key: RssKey,
    pub fieldset: FieldSet,
    pub table: IndirectionTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `shared-nothing`, `load-balance` or `locks`.
    pub mode: String,
    /// Digest of the constraint set the keys were synthesized for.
    pub constraints: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RssConfigBundle {
    pub cores: usize,
    pub interfaces: BTreeMap<IfaceId, InterfaceConfig>,
    pub provenance: Provenance,
}

impl RssConfigBundle {
    pub fn engine(&self) -> Result<RssEngine> {
        let mut engine = RssEngine::new();
        for (&iface, cfg) in &self.interfaces {
            engine.configure(
                iface,
                InterfaceRss {
                    key: cfg.key.clone(),
                    fieldset: cfg.fieldset.clone(),
                    table: cfg.table.clone(),
                },
            )?;
        }
        Ok(engine)
    }

    /// Replaces every interface's table; tables stay identical across
    /// interfaces so that equal hashes on different ports meet on one core.
    pub fn with_table(&self, table: IndirectionTable) -> Self {
        let mut out = self.clone();
        for cfg in out.interfaces.values_mut() {
            cfg.table = table.clone();
        }
        out
    }

    /// Re-targets the bundle to a different core count with round-robin tables.
    pub fn with_cores(&self, cores: usize) -> Result<Self> {
        let size = self
            .interfaces
            .values()
            .next()
            .map_or(super::DEFAULT_TABLE_SIZE, |c| c.table.len());
        let mut out = self.with_table(IndirectionTable::round_robin(size, cores)?);
        out.cores = cores;
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# rss-config v1\n");
        out.push_str("# key: hex, byte 0 first; key bit 0 is the most significant bit of byte 0\n");
        out.push_str("# fieldset: hash input is the fields in order, each in network byte order\n");
        out.push_str("# table: core id per entry; entry used = hash & (entries - 1)\n");
        let _ = writeln!(out, "cores {}", self.cores);
        let _ = writeln!(
            out,
            "provenance mode={} constraints={:016x} seed={}",
            self.provenance.mode, self.provenance.constraints, self.provenance.seed
        );
        for (iface, cfg) in &self.interfaces {
            let _ = writeln!(out, "interface {iface}");
            out.push_str("fieldset ");
            out.push_str(&cfg.fieldset.id);
            for f in cfg.fieldset.fields() {
                out.push(' ');
                out.push_str(f.name());
            }
            out.push('\n');
            let _ = writeln!(out, "key {}", cfg.key.to_hex());
            out.push_str("table");
            for c in cfg.table.entries() {
                let _ = write!(out, " {c}");
            }
            out.push_str("\nend\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut cores = None;
        let mut provenance = Provenance {
            mode: "unknown".into(),
            constraints: 0,
            seed: 0,
        };
        let mut interfaces = BTreeMap::new();
        while let Some(line) = lines.next() {
            let mut words = line.split_whitespace();
            match words.next() {
                Some("cores") => {
                    cores = words.next().and_then(|w| w.parse::<usize>().ok());
                    if cores.is_none() {
                        return Err(Error::Parse(format!("bad core count in `{line}`")));
                    }
                }
                Some("provenance") => {
                    for kv in words {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| Error::Parse(format!("bad provenance item `{kv}`")))?;
                        match k {
                            "mode" => provenance.mode = v.to_string(),
                            "constraints" => {
                                provenance.constraints = u64::from_str_radix(v, 16)
                                    .map_err(|_| Error::Parse(format!("bad digest `{v}`")))?
                            }
                            "seed" => {
                                provenance.seed = v
                                    .parse()
                                    .map_err(|_| Error::Parse(format!("bad seed `{v}`")))?
                            }
                            _ => return Err(Error::Parse(format!("unknown provenance item `{k}`"))),
                        }
                    }
                }
                Some("interface") => {
                    let iface: IfaceId = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| Error::Parse(format!("bad interface line `{line}`")))?;
                    let cores = cores
                        .ok_or_else(|| Error::Parse("`cores` must precede interfaces".into()))?;
                    let cfg = parse_interface(&mut lines, cores)?;
                    if interfaces.insert(iface, cfg).is_some() {
                        return Err(Error::Parse(format!("interface {iface} configured twice")));
                    }
                }
                _ => return Err(Error::Parse(format!("unexpected line `{line}`"))),
            }
        }
        let cores = cores.ok_or_else(|| Error::Parse("missing `cores` line".into()))?;
        Ok(RssConfigBundle {
            cores,
            interfaces,
            provenance,
        })
    }
}

fn parse_interface<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    cores: usize,
) -> Result<InterfaceConfig> {
    let mut fieldset = None;
    let mut key = None;
    let mut table = None;
    for line in lines.by_ref() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("fieldset") => {
                let id = words
                    .next()
                    .ok_or_else(|| Error::Parse("fieldset without id".into()))?;
                let fields = words.map(str::parse).collect::<Result<Vec<Field>>>()?;
                fieldset = Some(FieldSet::new(id, &fields)?);
            }
            Some("key") => {
                key = Some(RssKey::from_hex(
                    words
                        .next()
                        .ok_or_else(|| Error::Parse("key line without value".into()))?,
                )?)
            }
            Some("table") => {
                let entries = words
                    .map(|w| {
                        w.parse()
                            .map_err(|_| Error::Parse(format!("bad table entry `{w}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                table = Some(IndirectionTable::from_entries(entries, cores)?);
            }
            Some("end") => {
                return Ok(InterfaceConfig {
                    key: key.ok_or_else(|| Error::Parse("interface without key".into()))?,
                    fieldset: fieldset
                        .ok_or_else(|| Error::Parse("interface without fieldset".into()))?,
                    table: table.ok_or_else(|| Error::Parse("interface without table".into()))?,
                })
            }
            _ => return Err(Error::Parse(format!("unexpected line `{line}` in interface block"))),
        }
    }
    Err(Error::Parse("unterminated interface block".into()))
}
