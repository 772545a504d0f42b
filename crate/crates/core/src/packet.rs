//! Packets, header fields and packet traces.
//!
//! A trace is an ordered list of packets. It has two on-disk forms:
//!
//! * text: a `# nf-trace v1 tick=<unit>` header line followed by one record per
//!   line with the columns
//!   `id time iface eth_src eth_dst ipv4_src ipv4_dst proto sport dport size reply_to`.
//!   MAC addresses are written `aa:bb:cc:dd:ee:ff`, IPv4 addresses dotted-quad,
//!   everything else decimal; `reply_to` is `-` when absent.
//! * binary: magic `NFTR`, a big-endian `u16` version (1), a `u16` length
//!   followed by the tick unit in UTF-8, a big-endian `u64` record count, then
//!   fixed 48-byte big-endian records in the same column order (`reply_to`
//!   stored as `u64::MAX` when absent).

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type IfaceId = u16;
pub type CoreId = u16;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Header fields an NF can read, rewrite or key state on.
///
/// Declaration order is the canonical order used for hash inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    EthSrc,
    EthDst,
    Ipv4Src,
    Ipv4Dst,
    Proto,
    L4Src,
    L4Dst,
}

impl Field {
    pub const ALL: [Field; 7] = [
        Field::EthSrc,
        Field::EthDst,
        Field::Ipv4Src,
        Field::Ipv4Dst,
        Field::Proto,
        Field::L4Src,
        Field::L4Dst,
    ];

    pub fn width(self) -> u32 {
        match self {
            Field::EthSrc | Field::EthDst => 48,
            Field::Ipv4Src | Field::Ipv4Dst => 32,
            Field::Proto => 8,
            Field::L4Src | Field::L4Dst => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::EthSrc => "eth_src",
            Field::EthDst => "eth_dst",
            Field::Ipv4Src => "ipv4_src",
            Field::Ipv4Dst => "ipv4_dst",
            Field::Proto => "proto",
            Field::L4Src => "l4_src",
            Field::L4Dst => "l4_dst",
        }
    }

    pub fn is_l4(self) -> bool {
        matches!(self, Field::L4Src | Field::L4Dst)
    }

    /// The field playing the mirrored role in a reply packet.
    pub fn swapped(self) -> Field {
        match self {
            Field::EthSrc => Field::EthDst,
            Field::EthDst => Field::EthSrc,
            Field::Ipv4Src => Field::Ipv4Dst,
            Field::Ipv4Dst => Field::Ipv4Src,
            Field::Proto => Field::Proto,
            Field::L4Src => Field::L4Dst,
            Field::L4Dst => Field::L4Src,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown packet field `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Header {
    pub eth_src: u64,
    pub eth_dst: u64,
    pub ipv4_src: u32,
    pub ipv4_dst: u32,
    pub proto: u8,
    pub sport: u16,
    pub dport: u16,
}

impl Header {
    pub fn has_ports(&self) -> bool {
        self.proto == PROTO_TCP || self.proto == PROTO_UDP
    }

    /// Value of `field`, or `None` for L4 ports on a non-TCP/UDP packet.
    pub fn get(&self, field: Field) -> Option<u64> {
        Some(match field {
            Field::EthSrc => self.eth_src,
            Field::EthDst => self.eth_dst,
            Field::Ipv4Src => self.ipv4_src as u64,
            Field::Ipv4Dst => self.ipv4_dst as u64,
            Field::Proto => self.proto as u64,
            Field::L4Src if self.has_ports() => self.sport as u64,
            Field::L4Dst if self.has_ports() => self.dport as u64,
            Field::L4Src | Field::L4Dst => return None,
        })
    }

    /// Value of `field` regardless of protocol (ports read as stored).
    pub fn raw(&self, field: Field) -> u64 {
        match field {
            Field::L4Src => self.sport as u64,
            Field::L4Dst => self.dport as u64,
            other => self.get(other).unwrap_or(0),
        }
    }

    /// Stores `value` truncated to the field width.
    pub fn set(&mut self, field: Field, value: u64) {
        let mask = mask(field.width());
        let v = value & mask;
        match field {
            Field::EthSrc => self.eth_src = v,
            Field::EthDst => self.eth_dst = v,
            Field::Ipv4Src => self.ipv4_src = v as u32,
            Field::Ipv4Dst => self.ipv4_dst = v as u32,
            Field::Proto => self.proto = v as u8,
            Field::L4Src => self.sport = v as u16,
            Field::L4Dst => self.dport = v as u16,
        }
    }

    /// Header of the reverse direction: addresses and ports exchanged.
    pub fn swapped(&self) -> Header {
        Header {
            eth_src: self.eth_dst,
            eth_dst: self.eth_src,
            ipv4_src: self.ipv4_dst,
            ipv4_dst: self.ipv4_src,
            proto: self.proto,
            sport: self.dport,
            dport: self.sport,
        }
    }
}

pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    /// Logical timestamp in ticks.
    pub time: u64,
    pub iface: IfaceId,
    pub header: Header,
    pub size: u16,
    /// When set, this packet is the environment's answer to the output of an
    /// earlier packet: executors rebuild its header from that packet's final
    /// header (swapped) if it was forwarded.
    pub reply_to: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub tick_unit: String,
    pub packets: Vec<Packet>,
}

const TRACE_MAGIC: &[u8; 4] = b"NFTR";
const TRACE_VERSION: u16 = 1;

fn fmt_mac(v: u64) -> String {
    let b = v.to_be_bytes();
    format!(
        "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
        b[2], b[3], b[4], b[5], b[6], b[7]
    )
}

fn parse_mac(s: &str) -> Result<u64> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 6 {
        return Err(Error::Parse(format!("bad MAC address `{s}`")));
    }
    let mut v = 0u64;
    for p in parts {
        let byte = u8::from_str_radix(p, 16)
            .map_err(|_| Error::Parse(format!("bad MAC address `{s}`")))?;
        v = (v << 8) | byte as u64;
    }
    Ok(v)
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
}

impl Trace {
    pub fn new(packets: Vec<Packet>) -> Self {
        Trace {
            tick_unit: "tick".to_string(),
            packets,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Ids must be unique and times non-decreasing in id order.
    pub fn validate(&self) -> Result<()> {
        let mut by_id: Vec<(u64, u64)> = self.packets.iter().map(|p| (p.id, p.time)).collect();
        by_id.sort_unstable();
        for w in by_id.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Invalid(format!("duplicate packet id {}", w[0].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Invalid(format!(
                    "packet {} has a timestamp earlier than packet {}",
                    w[1].0, w[0].0
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# nf-trace v1 tick={}\n", self.tick_unit);
        out.push_str(
            "# id time iface eth_src eth_dst ipv4_src ipv4_dst proto sport dport size reply_to\n",
        );
        for p in &self.packets {
            let h = &p.header;
            let reply = p.reply_to.map_or("-".to_string(), |r| r.to_string());
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {} {}\n",
                p.id,
                p.time,
                p.iface,
                fmt_mac(h.eth_src),
                fmt_mac(h.eth_dst),
                Ipv4Addr::from(h.ipv4_src),
                Ipv4Addr::from(h.ipv4_dst),
                h.proto,
                h.sport,
                h.dport,
                p.size,
                reply
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Trace> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))?;
        let rest = header
            .strip_prefix("# nf-trace v1")
            .ok_or_else(|| Error::Parse(format!("unsupported trace header `{header}`")))?;
        let tick_unit = rest
            .trim()
            .strip_prefix("tick=")
            .unwrap_or("tick")
            .to_string();
        let mut packets = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 12 {
                return Err(Error::Parse(format!(
                    "trace line {}: expected 12 columns, found {}",
                    n + 2,
                    cols.len()
                )));
            }
            let ip = |s: &str| -> Result<u32> {
                s.parse::<Ipv4Addr>()
                    .map(u32::from)
                    .map_err(|_| Error::Parse(format!("bad IPv4 address `{s}`")))
            };
            packets.push(Packet {
                id: parse_num(cols[0], "id")?,
                time: parse_num(cols[1], "time")?,
                iface: parse_num(cols[2], "interface")?,
                header: Header {
                    eth_src: parse_mac(cols[3])?,
                    eth_dst: parse_mac(cols[4])?,
                    ipv4_src: ip(cols[5])?,
                    ipv4_dst: ip(cols[6])?,
                    proto: parse_num(cols[7], "protocol")?,
                    sport: parse_num(cols[8], "port")?,
                    dport: parse_num(cols[9], "port")?,
                },
                size: parse_num(cols[10], "size")?,
                reply_to: match cols[11] {
                    "-" => None,
                    s => Some(parse_num(s, "reply id")?),
                },
            });
        }
        let trace = Trace { tick_unit, packets };
        trace.validate()?;
        Ok(trace)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.packets.len() * 48);
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_be_bytes());
        out.extend_from_slice(&(self.tick_unit.len() as u16).to_be_bytes());
        out.extend_from_slice(self.tick_unit.as_bytes());
        out.extend_from_slice(&(self.packets.len() as u64).to_be_bytes());
        for p in &self.packets {
            let h = &p.header;
            out.extend_from_slice(&p.id.to_be_bytes());
            out.extend_from_slice(&p.time.to_be_bytes());
            out.extend_from_slice(&p.iface.to_be_bytes());
            out.extend_from_slice(&h.eth_src.to_be_bytes()[2..]);
            out.extend_from_slice(&h.eth_dst.to_be_bytes()[2..]);
            out.extend_from_slice(&h.ipv4_src.to_be_bytes());
            out.extend_from_slice(&h.ipv4_dst.to_be_bytes());
            out.push(h.proto);
            out.push(0);
            out.extend_from_slice(&h.sport.to_be_bytes());
            out.extend_from_slice(&h.dport.to_be_bytes());
            out.extend_from_slice(&p.size.to_be_bytes());
            out.extend_from_slice(&p.reply_to.unwrap_or(u64::MAX).to_be_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Trace> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != TRACE_MAGIC {
            return Err(Error::Parse("not a binary trace (bad magic)".into()));
        }
        let version = u16::from_be_bytes(r.array()?);
        if version != TRACE_VERSION {
            return Err(Error::Parse(format!("unsupported trace version {version}")));
        }
        let unit_len = u16::from_be_bytes(r.array()?) as usize;
        let tick_unit = String::from_utf8(r.take(unit_len)?.to_vec())
            .map_err(|_| Error::Parse("tick unit is not UTF-8".into()))?;
        let count = u64::from_be_bytes(r.array()?);
        let mut packets = Vec::with_capacity(count.min(1 << 24) as usize);
        for _ in 0..count {
            let id = u64::from_be_bytes(r.array()?);
            let time = u64::from_be_bytes(r.array()?);
            let iface = u16::from_be_bytes(r.array()?);
            let mut mac = [0u8; 8];
            mac[2..].copy_from_slice(r.take(6)?);
            let eth_src = u64::from_be_bytes(mac);
            mac[2..].copy_from_slice(r.take(6)?);
            let eth_dst = u64::from_be_bytes(mac);
            let ipv4_src = u32::from_be_bytes(r.array()?);
            let ipv4_dst = u32::from_be_bytes(r.array()?);
            let proto = r.take(2)?[0];
            let sport = u16::from_be_bytes(r.array()?);
            let dport = u16::from_be_bytes(r.array()?);
            let size = u16::from_be_bytes(r.array()?);
            let reply = u64::from_be_bytes(r.array()?);
            packets.push(Packet {
                id,
                time,
                iface,
                header: Header {
                    eth_src,
                    eth_dst,
                    ipv4_src,
                    ipv4_dst,
                    proto,
                    sport,
                    dport,
                },
                size,
                reply_to: (reply != u64::MAX).then_some(reply),
            });
        }
        let trace = Trace { tick_unit, packets };
        trace.validate()?;
        Ok(trace)
    }

    /// Reads either form, detected from the leading bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Trace> {
        if bytes.starts_with(TRACE_MAGIC) {
            Trace::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Parse("trace is neither binary nor UTF-8 text".into()))?;
            Trace::from_text(text)
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Parse("truncated binary trace".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Trace {
        Trace::new(vec![
            Packet {
                id: 0,
                time: 0,
                iface: 0,
                header: Header {
                    eth_src: 0x0200_0000_0001,
                    eth_dst: 0x0200_0000_0002,
                    ipv4_src: 0x0102_0304,
                    ipv4_dst: 0x0506_0708,
                    proto: PROTO_TCP,
                    sport: 0x1111,
                    dport: 0x2222,
                },
                size: 64,
                reply_to: None,
            },
            Packet {
                id: 1,
                time: 3,
                iface: 1,
                header: Header {
                    proto: 1,
                    ..Header::default()
                },
                size: 1500,
                reply_to: Some(0),
            },
        ])
    }

    #[test]
    fn ports_absent_for_icmp() {
        let h = Header {
            proto: 1,
            sport: 7,
            ..Header::default()
        };
        assert_eq!(h.get(Field::L4Src), None);
        assert_eq!(h.raw(Field::L4Src), 7);
    }

    #[test]
    fn text_and_binary_forms_agree() {
        let t = sample();
        assert_eq!(Trace::from_text(&t.to_text()).unwrap(), t);
        assert_eq!(Trace::from_bytes(&t.to_binary()).unwrap(), t);
    }

    #[test]
    fn decreasing_time_rejected() {
        let mut t = sample();
        t.packets[1].time = 0;
        t.packets[0].time = 5;
        assert!(Trace::from_text(&t.to_text()).is_err());
    }

    #[test]
    fn truncated_binary_rejected() {
        let bytes = sample().to_binary();
        assert!(Trace::from_binary(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(src in any::<u32>(), dst in any::<u32>(), sp in any::<u16>(),
                             dp in any::<u16>(), mac in 0u64..(1 << 48), reply in proptest::option::of(0u64..1000)) {
            let t = Trace::new(vec![Packet {
                id: 7, time: 9, iface: 1,
                header: Header { eth_src: mac, eth_dst: mac ^ 1, ipv4_src: src, ipv4_dst: dst,
                                 proto: PROTO_UDP, sport: sp, dport: dp },
                size: 100, reply_to: reply,
            }]);
            prop_assert_eq!(Trace::from_binary(&t.to_binary()).unwrap(), t.clone());
            prop_assert_eq!(Trace::from_text(&t.to_text()).unwrap(), t);
        }
    }
}
