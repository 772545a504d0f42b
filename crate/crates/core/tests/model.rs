use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shardsmith_core::corpus;
use shardsmith_core::model::{
    enumerate_paths, exec_sequential, run_packet, Action, Attr, ExecutionTree, NfModel, NodeKind,
    StateStore, SymExpr,
};
use shardsmith_core::packet::{Field, Header, Packet, Trace, PROTO_TCP};

fn model(name: &str) -> NfModel {
    corpus::bundled()
        .into_iter()
        .find(|e| e.name == name)
        .unwrap()
        .model()
        .unwrap()
}

fn header(src: u32, dst: u32, sport: u16, dport: u16) -> Header {
    Header {
        eth_src: 0x0200_0000_0000 | src as u64,
        eth_dst: 0x0200_0000_0000 | dst as u64,
        ipv4_src: src,
        ipv4_dst: dst,
        proto: PROTO_TCP,
        sport,
        dport,
    }
}

fn pkt(id: u64, time: u64, iface: u16, h: Header) -> Packet {
    Packet {
        id,
        time,
        iface,
        header: h,
        size: 100,
        reply_to: None,
    }
}

#[test]
fn nop_shape() {
    let m = model("nop");
    assert_eq!(m.interfaces.len(), 2);
    assert!(m.objects.is_empty());
    let t = enumerate_paths(&m);
    assert_eq!(t.leaves_of(0).len(), 1);
    assert_eq!(t.leaves_of(1).len(), 1);
    assert_eq!(t.stateful_nodes().count(), 0);
}

fn map_keys(t: &ExecutionTree, obj: usize, iface: u16) -> Vec<Vec<Field>> {
    t.stateful_nodes()
        .filter(|&n| t.nodes[n].iface == iface)
        .filter_map(|n| match &t.nodes[n].kind {
            NodeKind::Op { obj: o, key, .. } if *o == obj => Some(
                key.iter()
                    .map(|a| match a.expr {
                        SymExpr::Field(f) => f,
                        ref e => panic!("unexpected atom {e:?}"),
                    })
                    .collect(),
            ),
            _ => None,
        })
        .collect()
}

#[test]
fn fw_keys_are_swapped_between_interfaces() {
    let m = model("fw");
    let t = enumerate_paths(&m);
    let flows = m.object("flows").unwrap();
    use Field::*;
    let lan = map_keys(&t, flows, 0);
    assert_eq!(lan, vec![vec![Ipv4Src, Ipv4Dst, L4Src, L4Dst]; 2]);
    let wan = map_keys(&t, flows, 1);
    assert_eq!(wan, vec![vec![Ipv4Dst, Ipv4Src, L4Dst, L4Src]]);
}

#[test]
fn fw_path_count() {
    // LAN: hit, miss with insert, miss with full table; WAN: hit, miss.
    let t = enumerate_paths(&model("fw"));
    assert_eq!(t.leaves_of(0).len(), 3);
    assert_eq!(t.leaves_of(1).len(), 2);
}

#[test]
fn fw_reply_forwarded_unsolicited_dropped() {
    let m = model("fw");
    let out = header(0x0a000001, 0xc6336401, 1000, 80);
    let mut reply = pkt(1, 2, 1, out.swapped());
    reply.reply_to = Some(0);
    let trace = Trace::new(vec![
        pkt(0, 1, 0, out),
        reply,
        pkt(2, 3, 1, header(0xc6336402, 0x0a000001, 80, 1000)),
    ]);
    let log = exec_sequential(&m, &trace).unwrap();
    assert_eq!(log.records[0].action, Action::Forward(1));
    assert_eq!(log.records[1].action, Action::Forward(0));
    assert_eq!(log.records[2].action, Action::Drop);
}

#[test]
fn fw_entry_expires() {
    let m = model("fw");
    let out = header(1, 2, 3, 4);
    let trace = Trace::new(vec![
        pkt(0, 0, 0, out),
        pkt(1, 20_001, 1, out.swapped()),
    ]);
    let log = exec_sequential(&m, &trace).unwrap();
    assert_eq!(log.records[1].action, Action::Drop);
}

#[test]
fn psd_blocks_port_past_threshold() {
    let m = model("psd");
    let trace = Trace::new(
        (0..65u64)
            .map(|i| pkt(i, i, 0, header(7, 9, 5000, 100 + i as u16)))
            .collect(),
    );
    let log = exec_sequential(&m, &trace).unwrap();
    assert!(log.records[..64].iter().all(|r| r.action == Action::Forward(1)));
    assert_eq!(log.records[64].action, Action::Drop);
    // a port already seen stays open
    let mut again = trace.clone();
    again.packets.push(pkt(65, 65, 0, header(7, 9, 5000, 100)));
    let log = exec_sequential(&m, &again).unwrap();
    assert_eq!(log.records[65].action, Action::Forward(1));
}

#[test]
fn nat_rewrites_and_translates_back() {
    let m = model("nat");
    let out = header(0x0a000005, 0xc6336401, 4321, 443);
    let mut reply = pkt(1, 1, 1, out);
    reply.reply_to = Some(0);
    let trace = Trace::new(vec![pkt(0, 0, 0, out), reply]);
    let log = exec_sequential(&m, &trace).unwrap();
    assert_eq!(log.records[0].header.ipv4_src, 0xcb007101);
    assert_eq!(log.records[0].header.sport, 1024);
    assert_eq!(log.records[1].action, Action::Forward(0));
    assert_eq!(log.records[1].header.ipv4_dst, 0x0a000005);
    assert_eq!(log.records[1].header.dport, 4321);
}

#[test]
fn sequential_is_deterministic() {
    let m = model("policer");
    let trace = random_trace(&mut ChaCha8Rng::seed_from_u64(3), 500, 8);
    assert_eq!(exec_sequential(&m, &trace).unwrap(), exec_sequential(&m, &trace).unwrap());
}

fn random_trace(rng: &mut ChaCha8Rng, n: u64, domain: u32) -> Trace {
    let mut time = 0;
    Trace::new(
        (0..n)
            .map(|id| {
                time += rng.gen_range(0..3000);
                let h = header(
                    rng.gen_range(0..domain),
                    rng.gen_range(0..domain),
                    rng.gen_range(0..domain) as u16,
                    rng.gen_range(0..domain) as u16,
                );
                let mut p = pkt(id, time, rng.gen_range(0..2), h);
                p.size = rng.gen_range(64..1500);
                p
            })
            .collect(),
    )
}

fn constants(e: &SymExpr, out: &mut Vec<u64>) {
    match e {
        SymExpr::Const(v) => out.extend([*v, v.wrapping_add(1), v.saturating_sub(1)]),
        SymExpr::Bin(_, a, b) => {
            constants(a, out);
            constants(b, out);
        }
        SymExpr::Bits { of, .. } => constants(of, out),
        _ => {}
    }
}

/// Constraints of every leaf hold for some assignment drawn from a reduced
/// domain: small values plus the constants the constraints mention, off by
/// at most one.
#[test]
fn no_leaf_is_unsatisfiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for entry in corpus::bundled() {
        let t = enumerate_paths(&entry.model().unwrap());
        for leaf in t.leaves() {
            let cs = &t.nodes[leaf].constraints;
            let mut pool: Vec<u64> = (0..16).collect();
            for c in cs {
                for e in c.cond.operands() {
                    constants(e, &mut pool);
                }
            }
            let mut draw = || pool[rng.gen_range(0..pool.len())];
            let found = (0..100_000).any(|_| {
                let h = Header {
                    eth_src: draw(),
                    eth_dst: draw(),
                    ipv4_src: draw() as u32,
                    ipv4_dst: draw() as u32,
                    proto: PROTO_TCP,
                    sport: draw() as u16,
                    dport: draw() as u16,
                };
                let time = draw();
                let size = draw();
                let results: Vec<[u64; 2]> = (0..t.nodes.len())
                    .map(|_| [draw() & 1, draw()])
                    .collect();
                let res = |n: usize, a: Attr| {
                    Some(results[n][if matches!(a, Attr::Found | Attr::Ok) { 0 } else { 1 }])
                };
                cs.iter()
                    .all(|c| c.cond.eval(&h, time, size, &res) == Some(c.holds))
            });
            assert!(found, "{}: leaf {leaf} looks unsatisfiable: {cs:?}", entry.name);
        }
    }
}

/// Walking the tree and interpreting the model agree, and the results seen
/// along the way select exactly one leaf.
#[test]
fn tree_agrees_with_interpreter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for entry in corpus::bundled() {
        let m = entry.model().unwrap();
        let t = enumerate_paths(&m);
        let trace = random_trace(&mut rng, 3000, 12);
        let mut a = StateStore::sequential(&m);
        let mut b = StateStore::sequential(&m);
        for p in &trace.packets {
            let x = run_packet(&m, p.iface, p.header, p.time, p.size, &mut a).unwrap();
            let (y, leaf, results) = t.execute(p.iface, p.header, p.time, p.size, &mut b).unwrap();
            assert_eq!(x, y, "{} packet {}", entry.name, p.id);
            let res = |n: usize, at: Attr| results.get(&n).map(|v| v[if matches!(at, Attr::Found | Attr::Ok) { 0 } else { 1 }]);
            let matching: Vec<usize> = t
                .leaves_of(p.iface)
                .into_iter()
                .filter(|&l| {
                    t.nodes[l].constraints.iter().all(|c| {
                        c.cond.eval(&p.header, p.time, p.size as u64, &res) == Some(c.holds)
                    })
                })
                .collect();
            assert_eq!(matching, vec![leaf], "{} packet {}", entry.name, p.id);
        }
    }
}
