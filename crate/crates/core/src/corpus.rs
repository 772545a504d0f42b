//! Bundled NF models with the verdicts the analysis is expected to reach.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{parse_model, NfModel};
use crate::packet::Field;
use crate::sim::TrafficSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedVerdict {
    NoConstraints,
    SharedNothing,
    Locks,
}

impl std::str::FromStr for ExpectedVerdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-constraints" => Ok(ExpectedVerdict::NoConstraints),
            "shared-nothing" => Ok(ExpectedVerdict::SharedNothing),
            "locks" => Ok(ExpectedVerdict::Locks),
            _ => Err(Error::Parse(format!("unknown verdict `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub source: String,
    pub verdict: ExpectedVerdict,
    /// Rule that decides the outcome, when the manifest names one.
    pub rule: Option<String>,
    /// Expected sharding fields per interface name, in key order.
    pub fields: Vec<(String, Vec<Field>)>,
    /// Interface name new flows arrive on; the first interface if unset.
    pub origin: Option<String>,
}

impl CorpusEntry {
    pub fn model(&self) -> Result<NfModel> {
        parse_model(&self.source)
    }

    /// `base` with flows starting on the origin interface and replies, plus
    /// some unsolicited packets, arriving on the next one.
    pub fn workload(&self, model: &NfModel, base: TrafficSpec) -> TrafficSpec {
        let ids = model.iface_ids();
        let origin = self
            .origin
            .as_deref()
            .and_then(|n| model.iface(n))
            .unwrap_or(ids[0]);
        let pos = ids.iter().position(|i| *i == origin).unwrap_or(0);
        let reply = ids.get((pos + 1) % ids.len()).copied().filter(|r| *r != origin);
        TrafficSpec {
            origin,
            reply_iface: reply,
            reply_ratio: if reply.is_some() { 0.3 } else { 0.0 },
            unsolicited_ratio: if reply.is_some() { 0.02 } else { 0.0 },
            ..base
        }
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("nop", include_str!("../corpus/nop.nf")),
    ("sbridge", include_str!("../corpus/sbridge.nf")),
    ("dbridge", include_str!("../corpus/dbridge.nf")),
    ("policer", include_str!("../corpus/policer.nf")),
    ("fw", include_str!("../corpus/fw.nf")),
    ("psd", include_str!("../corpus/psd.nf")),
    ("nat", include_str!("../corpus/nat.nf")),
    ("cl", include_str!("../corpus/cl.nf")),
    ("lb", include_str!("../corpus/lb.nf")),
];

const MANIFEST: &str = include_str!("../corpus/manifest.txt");

type ManifestLine = (String, ExpectedVerdict, Option<String>, Option<String>, Vec<(String, Vec<Field>)>);

fn parse_manifest(text: &str) -> Result<Vec<ManifestLine>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse(format!("manifest line {}: {m}", n + 1));
        let mut words = line.split_whitespace();
        let name = words.next().unwrap().to_string();
        let verdict = words
            .next()
            .ok_or_else(|| err("missing verdict".into()))?
            .parse()
            .map_err(|e: Error| err(e.to_string()))?;
        let mut rule = None;
        let mut origin = None;
        let mut fields = Vec::new();
        for w in words {
            if let Some(r) = w.strip_prefix("rule=") {
                rule = Some(r.to_string());
            } else if let Some(o) = w.strip_prefix("origin=") {
                origin = Some(o.to_string());
            } else if let Some((iface, list)) = w.split_once(':') {
                let fs = list
                    .split(',')
                    .map(|f| f.parse::<Field>())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| err(e.to_string()))?;
                fields.push((iface.to_string(), fs));
            } else {
                return Err(err(format!("unexpected `{w}`")));
            }
        }
        out.push((name, verdict, rule, origin, fields));
    }
    Ok(out)
}

fn assemble(manifest: &str, source_of: impl Fn(&str) -> Result<String>) -> Result<Vec<CorpusEntry>> {
    parse_manifest(manifest)?
        .into_iter()
        .map(|(name, verdict, rule, origin, fields)| {
            Ok(CorpusEntry {
                source: source_of(&name)?,
                name,
                verdict,
                rule,
                fields,
                origin,
            })
        })
        .collect()
}

/// The corpus compiled into the library.
pub fn bundled() -> Vec<CorpusEntry> {
    assemble(MANIFEST, |name| {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s.to_string())
            .ok_or_else(|| Error::Invalid(format!("no bundled model `{name}`")))
    })
    .expect("bundled manifest is well formed")
}

/// Loads `manifest.txt` and `<name>.nf` files from `dir`.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let entries = assemble(&manifest, |name| {
        Ok(std::fs::read_to_string(dir.join(format!("{name}.nf")))?)
    })?;
    if entries.is_empty() {
        return Err(Error::Invalid(format!("corpus at {} lists no models", dir.display())));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_model_parses() {
        let all = bundled();
        assert_eq!(all.len(), 9);
        for e in &all {
            e.model().unwrap_or_else(|err| panic!("{}: {err}", e.name));
        }
    }

    #[test]
    fn manifest_fields() {
        let fw = bundled().into_iter().find(|e| e.name == "fw").unwrap();
        assert_eq!(fw.verdict, ExpectedVerdict::SharedNothing);
        assert_eq!(fw.fields[1].0, "wan");
        assert_eq!(fw.fields[1].1[0], Field::Ipv4Dst);
    }

    #[test]
    fn bad_manifest_rejected() {
        assert!(parse_manifest("x maybe\n").is_err());
        assert!(parse_manifest("x locks lan:nope\n").is_err());
    }
}
