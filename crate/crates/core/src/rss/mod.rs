//! Software model of NIC receive-side scaling: Toeplitz hashing over selected
//! header fields, indirection-table steering and table rebalancing.
//!
//! Bit conventions: key bit 0 is the most significant bit of key byte 0. Hash
//! inputs are the selected fields concatenated in canonical field order, each in
//! network byte order. The hash is accumulated MSB-first: input bit `x` set
//! XORs key bits `[x, x + 32)` into the running value, so hash bit 31 (the MSB)
//! for input bit `x` comes from key bit `x`.

mod config;
mod rebalance;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{CoreId, Field, Header, IfaceId};

pub use config::RssConfigBundle;
pub use config::{InterfaceConfig, Provenance};
pub use rebalance::{core_loads, rebalance_table};

pub const HASH_BITS: usize = 32;
pub const DEFAULT_KEY_BYTES: usize = 52;
pub const DEFAULT_TABLE_SIZE: usize = 512;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RssKey {
    bytes: Vec<u8>,
}

impl RssKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        RssKey { bytes }
    }

    pub fn zero(len_bytes: usize) -> Self {
        RssKey {
            bytes: vec![0; len_bytes],
        }
    }

    pub fn random<R: Rng + ?Sized>(len_bytes: usize, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; len_bytes];
        rng.fill(bytes.as_mut_slice());
        RssKey { bytes }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        assert!(bits.len().is_multiple_of(8), "key length must be a whole number of bytes");
        let mut key = RssKey::zero(bits.len() / 8);
        for (i, &b) in bits.iter().enumerate() {
            key.set_bit(i, b);
        }
        key
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len_bits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        let m = 1u8 << (7 - i % 8);
        if value {
            self.bytes[i / 8] |= m;
        } else {
            self.bytes[i / 8] &= !m;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if !s.len().is_multiple_of(2) {
            return Err(Error::Parse(format!("odd-length key hex `{s}`")));
        }
        let bytes = (0..s.len())
            .step_by(2)
            .map(|i| {
                u8::from_str_radix(&s[i..i + 2], 16)
                    .map_err(|_| Error::Parse(format!("bad key hex `{s}`")))
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(RssKey { bytes })
    }
}

impl fmt::Debug for RssKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RssKey({})", self.to_hex())
    }
}

/// Concatenated header fields fed to the hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashInput {
    bytes: Vec<u8>,
}

impl HashInput {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        HashInput { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len_bits(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSet {
    pub id: String,
    fields: Vec<Field>,
}

impl FieldSet {
    /// Fields are stored in canonical order; duplicates are rejected.
    pub fn new(id: impl Into<String>, fields: &[Field]) -> Result<Self> {
        let mut sorted = fields.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != fields.len() {
            return Err(Error::Invalid("field set lists a field twice".into()));
        }
        if sorted.is_empty() {
            return Err(Error::Invalid("field set is empty".into()));
        }
        Ok(FieldSet {
            id: id.into(),
            fields: sorted,
        })
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn total_bits(&self) -> usize {
        self.fields.iter().map(|f| f.width() as usize).sum()
    }

    pub fn contains(&self, field: Field) -> bool {
        self.fields.contains(&field)
    }

    /// Bit offset of `field` inside the hash input, if selected.
    pub fn offset_of(&self, field: Field) -> Option<usize> {
        let mut off = 0;
        for &f in &self.fields {
            if f == field {
                return Some(off);
            }
            off += f.width() as usize;
        }
        None
    }

    pub fn requires_ports(&self) -> bool {
        self.fields.iter().any(|f| f.is_l4())
    }
}

impl fmt::Display for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.id)?;
        for (i, field) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{field}")?;
        }
        f.write_str(")")
    }
}

pub fn toeplitz_hash(key: &RssKey, input: &HashInput) -> Result<u32> {
    let needed = input.len_bits() + HASH_BITS;
    if needed > key.len_bits() {
        return Err(Error::InputTooLong {
            input_bits: input.len_bits(),
            key_bits: key.len_bits(),
            needed,
        });
    }
    let k = key.bytes();
    let mut hash = 0u32;
    for (i, &byte) in input.bytes().iter().enumerate() {
        if byte == 0 {
            continue;
        }
        // key bits [8i, 8i + 64), zero-padded past the end of the key
        let mut window = 0u64;
        for j in 0..8 {
            window = (window << 8) | *k.get(i + j).unwrap_or(&0) as u64;
        }
        for j in 0..8 {
            if byte & (0x80 >> j) != 0 {
                hash ^= (window >> (32 - j)) as u32;
            }
        }
    }
    Ok(hash)
}

pub fn extract_hash_input(header: &Header, fieldset: &FieldSet) -> Result<HashInput> {
    let mut bytes = Vec::with_capacity(fieldset.total_bits() / 8);
    for &field in fieldset.fields() {
        let value = header
            .get(field)
            .ok_or_else(|| Error::FieldsetInapplicable(fieldset.id.clone()))?;
        let nbytes = field.width() as usize / 8;
        bytes.extend_from_slice(&value.to_be_bytes()[8 - nbytes..]);
    }
    Ok(HashInput { bytes })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndirectionTable {
    entries: Vec<CoreId>,
}

impl IndirectionTable {
    /// Entries filled round-robin over `cores`.
    pub fn round_robin(size: usize, cores: usize) -> Result<Self> {
        if cores == 0 || cores > CoreId::MAX as usize {
            return Err(Error::Invalid(format!("unsupported core count {cores}")));
        }
        Self::from_entries((0..size).map(|i| (i % cores) as CoreId).collect(), cores)
    }

    pub fn from_entries(entries: Vec<CoreId>, cores: usize) -> Result<Self> {
        if !entries.len().is_power_of_two() {
            return Err(Error::Invalid(format!(
                "indirection table size {} is not a power of two",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|&&c| c as usize >= cores) {
            return Err(Error::Invalid(format!(
                "indirection table entry {bad} exceeds core count {cores}"
            )));
        }
        Ok(IndirectionTable { entries })
    }

    pub fn entries(&self) -> &[CoreId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Table slot selected by the low-order bits of `hash`.
    pub fn index_of(&self, hash: u32) -> usize {
        hash as usize & (self.entries.len() - 1)
    }

    pub fn lookup(&self, hash: u32) -> CoreId {
        self.entries[self.index_of(hash)]
    }

    pub fn max_core(&self) -> CoreId {
        self.entries.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NicProfile {
    pub name: String,
    pub key_bytes: usize,
    pub table_size: usize,
    pub fieldsets: Vec<FieldSet>,
}

impl NicProfile {
    /// 52-byte keys, 512-entry tables and a single IPv4 + TCP/UDP ports option:
    /// hashing on IP addresses alone or on MAC addresses is not offered.
    pub fn e810() -> Self {
        NicProfile {
            name: "e810".into(),
            key_bytes: DEFAULT_KEY_BYTES,
            table_size: DEFAULT_TABLE_SIZE,
            fieldsets: vec![FieldSet::new(
                "ipv4-tcp-udp",
                &[Field::Ipv4Src, Field::Ipv4Dst, Field::L4Src, Field::L4Dst],
            )
            .expect("static field set")],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fieldsets.is_empty() {
            return Err(Error::Invalid(format!(
                "NIC profile `{}` lists no field sets",
                self.name
            )));
        }
        if !self.table_size.is_power_of_two() {
            return Err(Error::Invalid(format!(
                "NIC profile `{}`: table size {} is not a power of two",
                self.name, self.table_size
            )));
        }
        for fs in &self.fieldsets {
            if fs.total_bits() + HASH_BITS > self.key_bytes * 8 {
                return Err(Error::Invalid(format!(
                    "field set `{}` needs a key longer than {} bytes",
                    fs.id, self.key_bytes
                )));
            }
        }
        Ok(())
    }

    pub fn key_bits(&self) -> usize {
        self.key_bytes * 8
    }

    pub fn is_hashable(&self, field: Field) -> bool {
        self.fieldsets.iter().any(|fs| fs.contains(field))
    }

    pub fn fieldset(&self, id: &str) -> Option<&FieldSet> {
        self.fieldsets.iter().find(|fs| fs.id == id)
    }

    /// Field set with the most fields, used when hashing only balances load.
    pub fn widest_fieldset(&self) -> &FieldSet {
        self.fieldsets
            .iter()
            .max_by(|a, b| {
                a.total_bits()
                    .cmp(&b.total_bits())
                    .then_with(|| b.id.cmp(&a.id))
            })
            .expect("validated profile has field sets")
    }

    /// Text form:
    ///
    /// ```text
    /// nic-profile v1
    /// name e810
    /// key-bytes 52
    /// table-size 512
    /// fieldset ipv4-tcp-udp ipv4_src ipv4_dst l4_src l4_dst
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "nic-profile v1\nname {}\nkey-bytes {}\ntable-size {}\n",
            self.name, self.key_bytes, self.table_size
        );
        for fs in &self.fieldsets {
            out.push_str("fieldset ");
            out.push_str(&fs.id);
            for f in fs.fields() {
                out.push(' ');
                out.push_str(f.name());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("nic-profile v1") {
            return Err(Error::Parse("NIC profile must start with `nic-profile v1`".into()));
        }
        let mut profile = NicProfile {
            name: String::new(),
            key_bytes: DEFAULT_KEY_BYTES,
            table_size: DEFAULT_TABLE_SIZE,
            fieldsets: Vec::new(),
        };
        for line in lines {
            let mut words = line.split_whitespace();
            let parse_usize = |w: Option<&str>| -> Result<usize> {
                w.and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad number in `{line}`")))
            };
            match words.next() {
                Some("name") => profile.name = words.collect::<Vec<_>>().join(" "),
                Some("key-bytes") => profile.key_bytes = parse_usize(words.next())?,
                Some("table-size") => profile.table_size = parse_usize(words.next())?,
                Some("fieldset") => {
                    let id = words
                        .next()
                        .ok_or_else(|| Error::Parse("fieldset without id".into()))?;
                    let fields = words.map(str::parse).collect::<Result<Vec<Field>>>()?;
                    profile.fieldsets.push(FieldSet::new(id, &fields)?);
                }
                _ => return Err(Error::Parse(format!("unknown NIC profile line `{line}`"))),
            }
        }
        profile.validate()?;
        Ok(profile)
    }
}

impl Default for NicProfile {
    fn default() -> Self {
        NicProfile::e810()
    }
}

/// Core that receives packets whose header lacks a field of the configured set.
pub const DEFAULT_QUEUE: CoreId = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfaceRss {
    pub key: RssKey,
    pub fieldset: FieldSet,
    pub table: IndirectionTable,
}

#[derive(Debug, Clone, Default)]
pub struct RssEngine {
    interfaces: BTreeMap<IfaceId, InterfaceRss>,
}

impl RssEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn configure(&mut self, iface: IfaceId, rss: InterfaceRss) -> Result<()> {
        if rss.fieldset.total_bits() + HASH_BITS > rss.key.len_bits() {
            return Err(Error::InputTooLong {
                input_bits: rss.fieldset.total_bits(),
                key_bits: rss.key.len_bits(),
                needed: rss.fieldset.total_bits() + HASH_BITS,
            });
        }
        self.interfaces.insert(iface, rss);
        Ok(())
    }

    pub fn interface(&self, iface: IfaceId) -> Option<&InterfaceRss> {
        self.interfaces.get(&iface)
    }

    pub fn interfaces(&self) -> impl Iterator<Item = (IfaceId, &InterfaceRss)> {
        self.interfaces.iter().map(|(&i, r)| (i, r))
    }

    /// Hash of `header` on `iface`; `Ok(None)` when the field set does not apply.
    pub fn hash(&self, iface: IfaceId, header: &Header) -> Result<Option<u32>> {
        let rss = self
            .interfaces
            .get(&iface)
            .ok_or(Error::UnconfiguredInterface(iface))?;
        match extract_hash_input(header, &rss.fieldset) {
            Ok(input) => Ok(Some(toeplitz_hash(&rss.key, &input)?)),
            Err(Error::FieldsetInapplicable(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn steer(&self, iface: IfaceId, header: &Header) -> Result<CoreId> {
        let rss = &self.interfaces[&iface];
        Ok(match self.hash(iface, header)? {
            Some(h) => rss.table.lookup(h),
            None => DEFAULT_QUEUE,
        })
    }
}
