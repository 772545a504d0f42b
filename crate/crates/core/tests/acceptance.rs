//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the test fails if any criterion does.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shardsmith_core::corpus::{self, CorpusEntry};
use shardsmith_core::keygen::{
    score_distribution, select_fieldsets, synthesize_keys, uniform_flows, verify_keys, KeySearchConfig,
};
use shardsmith_core::model::{exec_sequential, NfModel};
use shardsmith_core::packet::{CoreId, Header, IfaceId, Packet, Trace, PROTO_TCP};
use shardsmith_core::pipeline::{run_pipeline, AnalysisReport, Deployment, PipelineOptions};
use shardsmith_core::rss::{
    rebalance_table, toeplitz_hash, HashInput, IndirectionTable, InterfaceConfig, NicProfile, Provenance,
    RssConfigBundle, RssKey,
};
use shardsmith_core::sharding::{analyze_sharding, emit_constraints, Rule, SolveOptions, Verdict};
use shardsmith_core::sim::{
    check_equivalence, exec_lock_based, exec_lock_based_with, exec_shared_nothing, gen_traffic, measure_skew,
    Abstraction, SimConfig, Steering, TrafficSpec,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(start.elapsed() < limit, || format!("took {:?}, limit {limit:?}", start.elapsed()))
}

fn entries() -> Vec<(CorpusEntry, NfModel)> {
    corpus::bundled()
        .into_iter()
        .map(|e| {
            let m = e.model().unwrap();
            (e, m)
        })
        .collect()
}

fn entry(name: &str) -> (CorpusEntry, NfModel) {
    entries().into_iter().find(|(e, _)| e.name == name).unwrap()
}

fn report(m: &NfModel, seed: u64, verify_samples: usize) -> AnalysisReport {
    let opts = PipelineOptions {
        keys: KeySearchConfig {
            seed,
            verify_samples,
            ..KeySearchConfig::default()
        },
        ..PipelineOptions::default()
    };
    run_pipeline(m, &NicProfile::e810(), &opts).unwrap()
}

fn workload(e: &CorpusEntry, m: &NfModel, base: TrafficSpec, seed: u64) -> Trace {
    gen_traffic(&e.workload(m, base), seed).unwrap()
}

/// Hash bit b is the XOR, over set input bits i, of key bit i + b.
fn reference_toeplitz(key: &[u8], input: &[u8]) -> u32 {
    let key_bit = |i: usize| key.get(i / 8).is_some_and(|b| b >> (7 - i % 8) & 1 == 1);
    let mut out = 0u32;
    for b in 0..32 {
        let mut bit = false;
        for i in 0..input.len() * 8 {
            if input[i / 8] >> (7 - i % 8) & 1 == 1 {
                bit ^= key_bit(i + b);
            }
        }
        if bit {
            out |= 1 << (31 - b);
        }
    }
    out
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 0..1000 {
        let key: Vec<u8> = (0..52).map(|_| rng.gen()).collect();
        let len = rng.gen_range(0..=48);
        let input: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let got = toeplitz_hash(&RssKey::from_bytes(key.clone()), &HashInput::from_bytes(input.clone())).unwrap();
        ensure(got == reference_toeplitz(&key, &input), || format!("pair {n} differs"))?;
    }
    let mut key = RssKey::zero(52);
    for _ in 0..100 {
        let input: Vec<u8> = (0..36).map(|_| rng.gen()).collect();
        ensure(toeplitz_hash(&key, &HashInput::from_bytes(input)).unwrap() == 0, || "zero key".into())?;
    }
    for i in 0..key.len_bits() {
        key.set_bit(i, rng.gen());
    }
    ensure(toeplitz_hash(&key, &HashInput::from_bytes(vec![0; 36])).unwrap() == 0, || "zero input".into())?;
    for i in 0..36 * 8 {
        let mut input = vec![0u8; 36];
        input[i / 8] = 0x80 >> (i % 8);
        let window = (0..32).fold(0u32, |acc, b| acc << 1 | key.bit(i + b) as u32);
        ensure(toeplitz_hash(&key, &HashInput::from_bytes(input)).unwrap() == window, || format!("single bit {i}"))?;
    }
    within(start, Duration::from_secs(1))?;
    Ok(format!("1000 pairs match the reference, identities hold ({:?})", start.elapsed()))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let shared = |fields: &[(&str, &[&str])]| -> BTreeMap<String, Vec<String>> {
        fields
            .iter()
            .map(|(i, f)| (i.to_string(), f.iter().map(|s| s.to_string()).collect()))
            .collect()
    };
    let five_lan: &[&str] = &["ipv4_src", "ipv4_dst", "l4_src", "l4_dst"];
    let five_wan: &[&str] = &["ipv4_dst", "ipv4_src", "l4_dst", "l4_src"];
    let expect: Vec<(&str, Verdict, Option<Rule>, BTreeMap<String, Vec<String>>)> = vec![
        ("nop", Verdict::NoConstraints, None, BTreeMap::new()),
        ("sbridge", Verdict::NoConstraints, None, BTreeMap::new()),
        ("policer", Verdict::SharedNothing, None, shared(&[("wan", &["ipv4_dst"])])),
        ("fw", Verdict::SharedNothing, None, shared(&[("lan", five_lan), ("wan", five_wan)])),
        ("psd", Verdict::SharedNothing, None, shared(&[("lan", &["ipv4_src"])])),
        (
            "nat",
            Verdict::SharedNothing,
            Some(Rule::R5),
            shared(&[("lan", &["ipv4_dst", "l4_dst"]), ("wan", &["ipv4_src", "l4_src"])]),
        ),
        (
            "cl",
            Verdict::SharedNothing,
            Some(Rule::R2),
            shared(&[("lan", &["ipv4_src", "ipv4_dst"]), ("wan", &["ipv4_dst", "ipv4_src"])]),
        ),
        ("dbridge", Verdict::Infeasible, Some(Rule::R4), BTreeMap::new()),
        ("lb", Verdict::Infeasible, Some(Rule::R4), BTreeMap::new()),
    ];
    let all = entries();
    ensure(all.len() == expect.len(), || format!("corpus has {} NFs", all.len()))?;
    for (name, verdict, rule, fields) in expect {
        let (_, m) = all.iter().find(|(e, _)| e.name == name).ok_or(format!("{name} missing"))?;
        let a = analyze_sharding(m, &NicProfile::e810(), &SolveOptions::default());
        ensure(a.diagnosis.verdict == verdict, || format!("{name}: {}", a.diagnosis.verdict))?;
        match verdict {
            Verdict::SharedNothing => {
                let s = a.solution.as_ref().ok_or(format!("{name}: no solution"))?;
                let got: BTreeMap<String, Vec<String>> = s
                    .fields
                    .iter()
                    .map(|(i, f)| (m.iface_name(*i), f.iter().map(|b| b.to_string()).collect()))
                    .collect();
                ensure(got == fields, || format!("{name}: fields {got:?}"))?;
                if let Some(r) = rule {
                    ensure(s.rule() == r, || format!("{name}: decided by {}", s.rule()))?;
                }
            }
            Verdict::NoConstraints => {
                let empty = a.solution.as_ref().is_none_or(|s| emit_constraints(s, m).is_empty());
                ensure(empty, || format!("{name}: has constraints"))?;
            }
            Verdict::Infeasible => {
                let cited: Vec<String> = a
                    .diagnosis
                    .reasons
                    .iter()
                    .filter(|r| Some(r.rule) == rule)
                    .map(|r| r.to_string())
                    .collect();
                ensure(!cited.is_empty(), || format!("{name}: no {rule:?} reason"))?;
                let topic = if name == "dbridge" { "eth_src" } else { "coordination" };
                ensure(cited.iter().any(|r| r.contains(topic)), || format!("{name}: {cited:?}"))?;
            }
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("9 NFs classified as expected ({:?})", start.elapsed()))
}

fn criterion_3() -> Check {
    let profile = NicProfile::e810();
    let mut summary = Vec::new();
    for (e, m) in entries() {
        let a = analyze_sharding(&m, &profile, &SolveOptions::default());
        if a.diagnosis.verdict != Verdict::SharedNothing {
            continue;
        }
        let start = Instant::now();
        let c = emit_constraints(a.solution.as_ref().unwrap(), &m);
        let fs = select_fieldsets(&c, &profile).map_err(|err| format!("{}: {err}", e.name))?;
        let bundle = synthesize_keys(&c, &fs, &KeySearchConfig::for_profile(&profile))
            .map_err(|err| format!("{}: {err}", e.name))?;
        let v = verify_keys(&bundle, &c, 1_000_000, 3);
        ensure(v.checks.iter().all(|k| k.samples == 1_000_000), || format!("{}: short sample", e.name))?;
        ensure(v.violations == 0, || format!("{}: {v}", e.name))?;
        within(start, Duration::from_secs(60)).map_err(|err| format!("{}: {err}", e.name))?;
        summary.push(format!("{} {}x10^6", e.name, v.checks.len()));
    }
    Ok(format!("0 violations: {}", summary.join(", ")))
}

fn criterion_4() -> Check {
    let flows = uniform_flows(10_000, 4);
    let mut worst = 0f64;
    for (e, m) in entries() {
        let r = report(&m, 4, 10_000);
        let s = score_distribution(&r.bundle.with_cores(16).unwrap(), &flows).unwrap();
        ensure(s.passes(1.5), || format!("{}: max/mean {:.3}", e.name, s.max_mean))?;
        worst = worst.max(s.max_mean);
    }
    let fs = NicProfile::e810().widest_fieldset().clone();
    let mut bits = vec![false; 416];
    bits[0] = true;
    let single = RssConfigBundle {
        cores: 16,
        interfaces: BTreeMap::from([(
            0,
            InterfaceConfig {
                key: RssKey::from_bits(&bits),
                fieldset: fs,
                table: IndirectionTable::round_robin(512, 16).unwrap(),
            },
        )]),
        provenance: Provenance {
            mode: "degenerate".into(),
            constraints: 0,
            seed: 0,
        },
    };
    let s = score_distribution(&single, &flows).unwrap();
    ensure(!s.passes(1.5), || format!("single-bit key passed with {:.3}", s.max_mean))?;
    Ok(format!("worst accepted max/mean {worst:.3}; single-bit key {:.3} rejected", s.max_mean))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut runs = 0;
    for (e, m) in entries() {
        let r = report(&m, 5, 10_000);
        for (n, base) in [TrafficSpec::default(), TrafficSpec::zipf()].into_iter().enumerate() {
            let t = workload(&e, &m, TrafficSpec { packets: 50_000, ..base }, 50 + n as u64);
            let seq = exec_sequential(&m, &t).unwrap();
            for cores in [1, 2, 4, 8, 16] {
                let cfg = SimConfig::new(cores).replicate();
                if r.deployment != Deployment::Locks {
                    let (par, metrics) = exec_shared_nothing(&m, &r.bundle, &t, &cfg).unwrap();
                    let rep = check_equivalence(&seq, &par, &t, &Abstraction::of(&m), 3);
                    ensure(rep.equivalent(), || format!("{} shared-nothing on {cores}: {rep}", e.name))?;
                    ensure(metrics.cross_core == 0, || format!("{} crossed cores on {cores}", e.name))?;
                    runs += 1;
                }
                let (par, _) = exec_lock_based(&m, &t, &cfg).unwrap();
                let rep = check_equivalence(&seq, &par, &t, &Abstraction::none(), 3);
                ensure(rep.equivalent(), || format!("{} locks on {cores}: {rep}", e.name))?;
                runs += 1;
            }
        }
    }
    within(start, Duration::from_secs(300))?;
    Ok(format!("{runs} runs of 50k packets, 0 mismatches ({:?})", start.elapsed()))
}

fn criterion_6() -> Check {
    let (e, m) = entry("fw");
    let bundle = report(&m, 6, 10_000).bundle;
    let mut locks = Vec::new();
    for churn in [0.0, 1.0, 10.0, 100.0] {
        let t = workload(&e, &m, TrafficSpec { packets: 50_000, churn, ..TrafficSpec::default() }, 6);
        let (_, l) = exec_lock_based(&m, &t, &SimConfig::new(8)).unwrap();
        let (_, sn) = exec_shared_nothing(&m, &bundle, &t, &SimConfig::new(8)).unwrap();
        ensure(sn.cross_core == 0, || format!("churn {churn}: {} cross-core", sn.cross_core))?;
        locks.push(l.write_locks);
    }
    ensure(locks.windows(2).all(|w| w[0] < w[1]), || format!("write locks {locks:?}"))?;
    Ok(format!("write locks {locks:?}, cross-core 0"))
}

/// Sends consecutive packets to consecutive cores.
struct RoundRobin {
    cores: usize,
    next: Cell<usize>,
}

impl Steering for RoundRobin {
    fn steer(&self, _: IfaceId, _: &Header) -> CoreId {
        let c = self.next.get();
        self.next.set(c + 1);
        (c % self.cores) as CoreId
    }
}

fn packet(id: u64, iface: IfaceId, header: Header, time: u64) -> Packet {
    Packet {
        id,
        iface,
        header,
        time,
        size: 64,
        reply_to: None,
    }
}

fn criterion_7() -> Check {
    let (_, m) = entry("fw");
    let flow = Header {
        eth_src: 1,
        eth_dst: 2,
        ipv4_src: 0x0a00_0001,
        ipv4_dst: 0xc0a8_0001,
        proto: PROTO_TCP,
        sport: 4000,
        dport: 80,
    };
    let cores = 16;
    let t = Trace::new((0..800).map(|i| packet(i, 0, flow, i * 1000)).collect());
    let rr = RoundRobin { cores, next: Cell::new(0) };
    let (par, metrics) = exec_lock_based_with(&m, &rr, &t, &SimConfig::new(cores)).unwrap();
    ensure(metrics.expiry_write_locks == 0, || format!("{} expiry write locks", metrics.expiry_write_locks))?;
    let seq = exec_sequential(&m, &t).unwrap();
    ensure(check_equivalence(&seq, &par, &t, &Abstraction::none(), 3).equivalent(), || "alternating".into())?;

    let mut packets: Vec<Packet> = (0..cores as u64).map(|i| packet(i, 0, flow, i * 10)).collect();
    let quiet = 16 * 10 + 20_001;
    for i in 0..8 {
        packets.push(packet(16 + i, 1, flow.swapped(), quiet + i));
    }
    let t = Trace::new(packets);
    let rr = RoundRobin { cores, next: Cell::new(0) };
    let (par, metrics) = exec_lock_based_with(&m, &rr, &t, &SimConfig::new(cores)).unwrap();
    ensure(metrics.global_clears == 1, || format!("{} global clears", metrics.global_clears))?;
    let seq = exec_sequential(&m, &t).unwrap();
    let rep = check_equivalence(&seq, &par, &t, &Abstraction::none(), 3);
    ensure(rep.equivalent(), || format!("stale state observed: {rep}"))?;
    let forwarded_late = par.records.iter().filter(|r| r.id >= 16 && r.action != shardsmith_core::model::Action::Drop);
    ensure(forwarded_late.count() == 0, || "a reply passed after expiry".into())?;
    Ok("0 expiry write locks while alternating; 1 global clear after silence".into())
}

fn criterion_8() -> Check {
    let (e, m) = entry("fw");
    let t = workload(&e, &m, TrafficSpec::zipf(), 8);
    let cores = 16;
    let mut wins = 0;
    for seed in 0..10 {
        let bundle = report(&m, 800 + seed, 10_000).bundle.with_cores(cores).unwrap();
        let (_, metrics) = exec_shared_nothing(&m, &bundle, &t, &SimConfig::new(cores)).unwrap();
        let table = bundle.interfaces[&0].table.clone();
        let before = measure_skew(&metrics, &table, &bundle, &t).unwrap();
        let after = measure_skew(&metrics, &rebalance_table(&table, &before.entry_load, cores), &bundle, &t).unwrap();
        wins += (after.max_mean < before.max_mean) as usize;
    }
    ensure(wins >= 9, || format!("rebalancing helped in {wins}/10"))?;

    let flow = uniform_flows(1, 8)[0];
    let t = Trace::new((0..5000).map(|i| packet(i, 0, flow, i)).collect());
    let bundle = report(&m, 8, 10_000).bundle.with_cores(cores).unwrap();
    let (_, metrics) = exec_shared_nothing(&m, &bundle, &t, &SimConfig::new(cores)).unwrap();
    let table = bundle.interfaces[&0].table.clone();
    let before = measure_skew(&metrics, &table, &bundle, &t).unwrap();
    let after = measure_skew(&metrics, &rebalance_table(&table, &before.entry_load, cores), &bundle, &t).unwrap();
    let pinned = |x: f64| (x - cores as f64).abs() < 1e-9;
    ensure(pinned(before.max_mean) && pinned(after.max_mean), || {
        format!("elephant {:.3} -> {:.3}", before.max_mean, after.max_mean)
    })?;
    Ok(format!("rebalancing helped in {wins}/10; a lone elephant stays on one core"))
}

fn criterion_9() -> Check {
    let run = || {
        let mut out = Vec::new();
        for (e, m) in entries() {
            let r = report(&m, 9, 5_000);
            out.push(r.to_text());
            out.push(r.bundle.to_text());
            let t = workload(&e, &m, TrafficSpec { packets: 5_000, churn: 10.0, ..TrafficSpec::zipf() }, 9);
            out.push(t.to_text());
            let cfg = SimConfig::new(4);
            let log = if r.deployment == Deployment::Locks {
                exec_lock_based(&m, &t, &cfg).unwrap()
            } else {
                exec_shared_nothing(&m, &r.bundle, &t, &cfg).unwrap()
            };
            out.push(format!("{:?}", log));
        }
        out
    };
    let (a, b) = (run(), run());
    ensure(a == b, || {
        let i = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(0);
        format!("artifact {i} differs")
    })?;
    Ok(format!("{} artifacts identical across two runs", a.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("toeplitz oracle", criterion_1),
        ("corpus classification", criterion_2),
        ("key soundness", criterion_3),
        ("key quality", criterion_4),
        ("semantic equivalence", criterion_5),
        ("churn", criterion_6),
        ("rejuvenation", criterion_7),
        ("skew and rebalancing", criterion_8),
        ("determinism", criterion_9),
    ];
    println!();
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", n + 1),
            Err(detail) => {
                println!("FAIL {} {name}: {detail}", n + 1);
                failed.push(n + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
