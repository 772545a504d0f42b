use std::collections::{HashMap, HashSet};

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{Header, IfaceId, Packet, Trace, PROTO_TCP, PROTO_UDP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    /// Popularity of the flow of rank `r` (from 1) is proportional to
    /// `r^-exponent`; `None` picks the exponent for which the top 4.8% of
    /// flows carry 80% of packets.
    Zipf { exponent: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub distribution: Distribution,
    pub packets: usize,
    /// Concurrent flows.
    pub flows: usize,
    /// Flow replacements per 1000 packets.
    pub churn: f64,
    pub size: u16,
    /// Share of packets that answer the latest packet of their flow.
    pub reply_ratio: f64,
    /// Share of packets arriving at the reply interface outside any flow.
    pub unsolicited_ratio: f64,
    /// Interface flows start on.
    pub origin: IfaceId,
    /// Interface replies arrive on; `None` disables replies.
    pub reply_iface: Option<IfaceId>,
    pub ticks_per_packet: u64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            distribution: Distribution::Uniform,
            packets: 50_000,
            flows: 1_000,
            churn: 0.0,
            size: 64,
            reply_ratio: 0.0,
            unsolicited_ratio: 0.0,
            origin: 0,
            reply_iface: None,
            ticks_per_packet: 1,
        }
    }
}

impl TrafficSpec {
    pub fn zipf() -> Self {
        TrafficSpec {
            distribution: Distribution::Zipf { exponent: None },
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.flows == 0 {
            return Err(Error::Invalid("traffic needs at least one flow".into()));
        }
        for (name, v) in [("reply ratio", self.reply_ratio), ("unsolicited ratio", self.unsolicited_ratio)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.churn < 0.0 || !self.churn.is_finite() {
            return Err(Error::Invalid(format!("churn {} must be a non-negative number", self.churn)));
        }
        if let Distribution::Zipf { exponent: Some(s) } = self.distribution {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Invalid(format!("zipf exponent {s} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Number of top flows used to calibrate the default exponent.
    pub fn head(&self) -> usize {
        ((self.flows as f64 * 0.048).round() as usize).max(1)
    }

    pub fn exponent(&self) -> Option<f64> {
        match self.distribution {
            Distribution::Uniform => None,
            Distribution::Zipf { exponent: Some(s) } => Some(s),
            Distribution::Zipf { exponent: None } => Some(calibrate_zipf(self.flows, self.head(), 0.8)),
        }
    }
}

fn weights(flows: usize, s: f64) -> Vec<f64> {
    (1..=flows).map(|r| (r as f64).powf(-s)).collect()
}

fn top_share(flows: usize, top: usize, s: f64) -> f64 {
    let w = weights(flows, s);
    w[..top.min(flows)].iter().sum::<f64>() / w.iter().sum::<f64>()
}

/// Exponent for which the `top` most popular of `flows` carry `share` of the
/// traffic, by bisection.
pub fn calibrate_zipf(flows: usize, top: usize, share: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 8.0f64);
    for _ in 0..60 {
        let mid = (lo + hi) / 2.0;
        if top_share(flows, top, mid) < share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

fn random_header<R: Rng>(rng: &mut R) -> Header {
    let src: u32 = 0x0a00_0000 | rng.gen_range(0..1 << 24);
    let dst: u32 = rng.gen();
    Header {
        eth_src: 0x0200_0000_0000 | src as u64,
        eth_dst: 0x0200_0000_0000 | dst as u64,
        ipv4_src: src,
        ipv4_dst: dst,
        proto: if rng.gen_bool(0.5) { PROTO_TCP } else { PROTO_UDP },
        sport: rng.gen_range(1024..=u16::MAX),
        dport: rng.gen_range(1..=u16::MAX),
    }
}

fn flow_key(h: &Header) -> (u8, u32, u32, u16, u16) {
    (h.proto, h.ipv4_src, h.ipv4_dst, h.sport, h.dport)
}

/// Generates a trace.
///
/// Flow `r` of the popularity ranking occupies slot `r`. Churn replaces the
/// flow of a slot by a new one; replacements are spread evenly over the
/// trace and visit the first `min(flows, events / 2)` slots in turn. The last
/// replacement of each slot brings back the slot's first flow, so the flow
/// set at the end equals the one at the start and a looped replay has no
/// startup phase.
pub fn gen_traffic(spec: &TrafficSpec, seed: u64) -> Result<Trace> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<(u8, u32, u32, u16, u16)> = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let h = random_header(rng);
        if seen.insert(flow_key(&h)) {
            break h;
        }
    };

    let events = (spec.churn * spec.packets as f64 / 1000.0).round() as usize;
    // every slot that churns turns over at least twice, so that it can
    // return to its first flow
    let turning = if events >= 2 { spec.flows.min(events / 2) } else { spec.flows };
    let mut per_slot = vec![0usize; spec.flows];
    for e in 0..events {
        per_slot[e % turning] += 1;
    }
    let first: Vec<Header> = (0..spec.flows).map(|_| fresh(&mut rng)).collect();
    let mut current = first.clone();
    let mut generation = vec![0usize; spec.flows];

    let picker = spec.exponent().map(|s| WeightedIndex::new(weights(spec.flows, s)).expect("positive weights"));
    let mut last_sent: HashMap<usize, u64> = HashMap::new();
    let mut next_event = 0usize;
    let mut packets = Vec::with_capacity(spec.packets);
    for i in 0..spec.packets {
        while next_event < events && (2 * next_event + 1) * spec.packets / (2 * events) <= i {
            let slot = next_event % turning;
            generation[slot] += 1;
            current[slot] = if generation[slot] == per_slot[slot] {
                first[slot]
            } else {
                fresh(&mut rng)
            };
            last_sent.remove(&slot);
            next_event += 1;
        }
        let id = i as u64;
        let time = id * spec.ticks_per_packet;
        let mut packet = Packet {
            id,
            time,
            iface: spec.origin,
            header: Header::default(),
            size: spec.size,
            reply_to: None,
        };
        let roll: f64 = rng.gen();
        let slot = match &picker {
            Some(w) => w.sample(&mut rng),
            None => rng.gen_range(0..spec.flows),
        };
        match spec.reply_iface {
            Some(back) if roll < spec.unsolicited_ratio => {
                packet.iface = back;
                packet.header = random_header(&mut rng);
            }
            Some(back) if roll < spec.unsolicited_ratio + spec.reply_ratio && last_sent.contains_key(&slot) => {
                packet.iface = back;
                packet.header = current[slot].swapped();
                packet.reply_to = Some(last_sent[&slot]);
            }
            _ => {
                packet.header = current[slot];
                last_sent.insert(slot, id);
            }
        }
        packets.push(packet);
    }
    Ok(Trace::new(packets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share_of_top(trace: &Trace, top: usize) -> f64 {
        let mut counts: HashMap<(u8, u32, u32, u16, u16), usize> = HashMap::new();
        for p in &trace.packets {
            *counts.entry(flow_key(&p.header)).or_default() += 1;
        }
        let mut c: Vec<usize> = counts.into_values().collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        c[..top].iter().sum::<usize>() as f64 / trace.len() as f64
    }

    #[test]
    fn default_zipf_top_48_carry_about_80_percent() {
        let spec = TrafficSpec::zipf();
        assert_eq!(spec.head(), 48);
        let t = gen_traffic(&spec, 3).unwrap();
        let share = share_of_top(&t, 48);
        assert!((0.75..=0.85).contains(&share), "{share}");
    }

    #[test]
    fn uniform_spreads_packets() {
        let t = gen_traffic(&TrafficSpec::default(), 1).unwrap();
        let share = share_of_top(&t, 48);
        assert!(share < 0.1, "{share}");
    }

    #[test]
    fn no_churn_keeps_flow_set() {
        let spec = TrafficSpec {
            flows: 50,
            packets: 5000,
            ..Default::default()
        };
        let t = gen_traffic(&spec, 2).unwrap();
        let flows: HashSet<_> = t.packets.iter().map(|p| flow_key(&p.header)).collect();
        assert_eq!(flows.len(), 50);
    }

    #[test]
    fn churn_is_cyclic() {
        let spec = TrafficSpec {
            flows: 4,
            packets: 4000,
            churn: 2.0,
            ..Default::default()
        };
        let t = gen_traffic(&spec, 5).unwrap();
        // 8 replacements at 250, 750, ..., 3750; every slot turns over twice
        let set = |r: std::ops::Range<usize>| t.packets[r].iter().map(|p| flow_key(&p.header)).collect::<HashSet<_>>();
        assert_eq!(set(0..t.len()).len(), 8);
        assert_eq!(set(0..250).len(), 4);
        assert_eq!(set(3750..4000), set(0..250));
        assert!(set(1750..2250).is_disjoint(&set(0..250)));
    }

    #[test]
    fn sparse_churn_still_replaces_flows() {
        let spec = TrafficSpec {
            flows: 100,
            packets: 10_000,
            churn: 1.0,
            ..Default::default()
        };
        let t = gen_traffic(&spec, 3).unwrap();
        let set = |r: std::ops::Range<usize>| t.packets[r].iter().map(|p| flow_key(&p.header)).collect::<HashSet<_>>();
        // 10 events at 500, 1500, ..., 9500 over 5 slots: 5 new flows come and go
        assert_eq!(set(0..t.len()).len(), 105);
        let ends: HashSet<_> = set(0..500).union(&set(9500..10_000)).copied().collect();
        assert!(ends.len() <= 100, "only first-generation flows at both ends");
    }

    #[test]
    fn replies_reference_earlier_packets() {
        let spec = TrafficSpec {
            flows: 10,
            packets: 1000,
            reply_ratio: 0.5,
            reply_iface: Some(1),
            ..Default::default()
        };
        let t = gen_traffic(&spec, 9).unwrap();
        let replies: Vec<&Packet> = t.packets.iter().filter(|p| p.reply_to.is_some()).collect();
        assert!(replies.len() > 300);
        for r in replies {
            let orig = &t.packets[r.reply_to.unwrap() as usize];
            assert_eq!(orig.iface, 0);
            assert_eq!(r.header, orig.header.swapped());
            assert_eq!(r.iface, 1);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = TrafficSpec {
            packets: 500,
            ..TrafficSpec::zipf()
        };
        assert_eq!(gen_traffic(&spec, 4).unwrap(), gen_traffic(&spec, 4).unwrap());
        assert_ne!(gen_traffic(&spec, 4).unwrap(), gen_traffic(&spec, 5).unwrap());
    }
}
