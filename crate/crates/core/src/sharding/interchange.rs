use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{exec_sequential, NfModel};
use crate::packet::{Header, IfaceId, Packet, Trace, PROTO_TCP};
use crate::sim::{check_equivalence, exec_shared_nothing_with, Abstraction, Projection, SimConfig};

use super::FieldBits;

/// Bits each interface's packets are steered on. Packets at different
/// interfaces meet when their bits agree position by position; interfaces
/// without an entry are steered on every field.
pub type ShardSpec = BTreeMap<IfaceId, Vec<FieldBits>>;

const IPS: [u32; 4] = [0x0a00_0001, 0x0a00_0002, 0xc0a8_0001, 0xc0a8_0002];
const PORTS: [u16; 3] = [80, 1000, 2000];
const CORES: [usize; 3] = [2, 3, 4];

/// A random trace over a handful of hosts and ports, so that keys collide
/// often. About a third of the packets answer an earlier one; time mostly
/// advances slowly with occasional jumps past typical expiry periods.
///
/// Fresh packets never arrive at interfaces whose output fields the model
/// abstracts: traffic there only makes sense as answers. For the same
/// reason such models only get answers to packets younger than their
/// shortest expiry period.
pub fn small_domain_trace(model: &NfModel, seed: u64, len: usize) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ifaces = model.iface_ids();
    let open: Vec<IfaceId> = ifaces
        .iter()
        .copied()
        .filter(|i| !model.abstractions.iter().any(|(a, _)| a == i))
        .collect();
    let open = if open.is_empty() { ifaces } else { open };
    let window = if model.abstractions.is_empty() {
        None
    } else {
        Abstraction::of(model).idle_reset
    };
    let mut time = 0u64;
    let mut packets: Vec<Packet> = Vec::with_capacity(len);
    for id in 0..len as u64 {
        time += if rng.gen_bool(0.04) {
            *[30_000u64, 60_000].choose(&mut rng).unwrap()
        } else {
            rng.gen_range(0..50)
        };
        let src = *IPS.choose(&mut rng).unwrap();
        let dst = *IPS.choose(&mut rng).unwrap();
        let header = Header {
            eth_src: 0x0200_0000_0000 | src as u64,
            eth_dst: 0x0200_0000_0000 | dst as u64,
            ipv4_src: src,
            ipv4_dst: dst,
            proto: PROTO_TCP,
            sport: *PORTS.choose(&mut rng).unwrap(),
            dport: *PORTS.choose(&mut rng).unwrap(),
        };
        let oldest = match window {
            Some(w) => packets.partition_point(|p| p.time + w < time) as u64,
            None => 0,
        };
        let reply_to = (id > oldest && rng.gen_bool(0.35)).then(|| rng.gen_range(oldest..id));
        packets.push(Packet {
            id,
            time,
            iface: *open.choose(&mut rng).unwrap(),
            header,
            size: 64,
            reply_to,
        });
    }
    Trace::new(packets)
}

/// Whether shared-nothing execution steered by `spec` reproduces the
/// sequential behaviour on `trials` small-domain traces and several core
/// counts. Conservative: any divergence gives false.
pub fn validate_sharding(model: &NfModel, spec: &ShardSpec, trials: usize, seed: u64) -> bool {
    let abstraction = Abstraction::of(model);
    (0..trials as u64).all(|t| {
        let trace = small_domain_trace(model, seed.wrapping_mul(1_000_003).wrapping_add(t), 200);
        let seq = exec_sequential(model, &trace).expect("generated traces match the model");
        CORES.iter().all(|&cores| {
            let steering = Projection {
                fields: spec.clone(),
                cores,
            };
            let cfg = SimConfig::new(cores).replicate();
            let (par, _) = exec_shared_nothing_with(model, &steering, &trace, &cfg).expect("valid simulation");
            check_equivalence(&seq, &par, &trace, &abstraction, 1).equivalent()
        })
    })
}

/// Differential check that sharding by `a` and sharding by `b` both keep
/// the sequential behaviour.
pub fn check_interchangeable(model: &NfModel, a: &ShardSpec, b: &ShardSpec, trials: usize) -> bool {
    validate_sharding(model, a, trials, 0) && validate_sharding(model, b, trials, 0)
}
