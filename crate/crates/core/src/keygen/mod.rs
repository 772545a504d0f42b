//! RSS key synthesis for pair constraint sets.
//!
//! The Toeplitz hash is linear over GF(2) in its input for a fixed key, so
//! requiring `h(k_i, d) = h(k_j, d')` for every pair satisfying a disjunct is
//! the same as requiring the hash difference to vanish on a spanning set of
//! that disjunct's pairs. Each spanning vector gives 32 linear equations over
//! the key bits. Bits are then pushed toward random targets, biased to 1, by
//! soft unit equations; conflicting soft equations are discarded a random
//! half of the conflict at a time.

mod gf2;
mod verify;

use std::collections::BTreeMap;
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{Header, IfaceId, PROTO_TCP};
use crate::rss::{
    FieldSet, IndirectionTable, InterfaceConfig, NicProfile, Provenance, RssConfigBundle, RssKey,
    DEFAULT_KEY_BYTES, DEFAULT_TABLE_SIZE, HASH_BITS,
};
use crate::sharding::PairConstraintSet;

pub use verify::{verify_keys, DisjunctCheck, VerificationReport};

use gf2::System;

/// Target values of the soft equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftPolicy {
    /// Probability that a bit's soft target is 1.
    pub ones: f64,
}

impl Default for SoftPolicy {
    fn default() -> Self {
        SoftPolicy { ones: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySearchConfig {
    pub workers: usize,
    /// Rounds of `workers` candidates tried before giving up.
    pub max_restarts: usize,
    pub seed: u64,
    pub soft: SoftPolicy,
    /// Highest accepted max/mean core load.
    pub threshold: f64,
    pub score_cores: usize,
    pub score_flows: usize,
    /// Constrained pairs per disjunct checked before a bundle is returned.
    pub verify_samples: usize,
    /// Cores of the emitted bundle.
    pub cores: usize,
    pub key_bytes: usize,
    pub table_size: usize,
}

impl Default for KeySearchConfig {
    fn default() -> Self {
        KeySearchConfig {
            workers: 4,
            max_restarts: 8,
            seed: 0,
            soft: SoftPolicy::default(),
            threshold: 1.5,
            score_cores: 16,
            score_flows: 10_000,
            verify_samples: 100_000,
            cores: 16,
            key_bytes: DEFAULT_KEY_BYTES,
            table_size: DEFAULT_TABLE_SIZE,
        }
    }
}

impl KeySearchConfig {
    pub fn for_profile(profile: &NicProfile) -> Self {
        KeySearchConfig {
            key_bytes: profile.key_bytes,
            table_size: profile.table_size,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionScore {
    /// Share of all steering decisions per core, over every interface.
    pub shares: Vec<f64>,
    /// Worst per-interface max/mean core load.
    pub max_mean: f64,
    pub per_interface: BTreeMap<IfaceId, f64>,
}

impl DistributionScore {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_mean <= threshold
    }
}

/// Smallest field set covering each interface's constrained fields; the
/// widest one for interfaces without constraints.
pub fn select_fieldsets(
    constraints: &PairConstraintSet,
    profile: &NicProfile,
) -> Result<BTreeMap<IfaceId, FieldSet>> {
    profile.validate()?;
    let atoms = constraints.atoms();
    let mut out = BTreeMap::new();
    for &iface in &constraints.interfaces {
        let Some(bits) = atoms.get(&iface) else {
            out.insert(iface, profile.widest_fieldset().clone());
            continue;
        };
        let chosen = profile
            .fieldsets
            .iter()
            .filter(|fs| bits.iter().all(|b| fs.contains(b.field)))
            .min_by(|a, b| a.total_bits().cmp(&b.total_bits()).then_with(|| a.id.cmp(&b.id)));
        match chosen {
            Some(fs) => {
                out.insert(iface, fs.clone());
            }
            None => {
                let names: Vec<String> = bits.iter().map(|b| b.to_string()).collect();
                return Err(Error::NoFieldset(format!(
                    "interface {iface} fields {{{}}} in profile `{}`",
                    names.join(", "),
                    profile.name
                )));
            }
        }
    }
    Ok(out)
}

/// Random TCP flows with every field uniform.
pub fn uniform_flows(n: usize, seed: u64) -> Vec<Header> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_header(&mut rng)).collect()
}

pub(crate) fn random_header<R: Rng + ?Sized>(rng: &mut R) -> Header {
    Header {
        eth_src: rng.gen::<u64>() & 0xffff_ffff_ffff,
        eth_dst: rng.gen::<u64>() & 0xffff_ffff_ffff,
        ipv4_src: rng.gen(),
        ipv4_dst: rng.gen(),
        proto: PROTO_TCP,
        sport: rng.gen(),
        dport: rng.gen(),
    }
}

/// Steers every flow on every interface of the bundle.
pub fn score_distribution(bundle: &RssConfigBundle, flows: &[Header]) -> Result<DistributionScore> {
    let engine = bundle.engine()?;
    let cores = bundle.cores.max(1);
    let mut total = vec![0u64; cores];
    let mut per_interface = BTreeMap::new();
    for (iface, _) in engine.interfaces() {
        let mut load = vec![0u64; cores];
        for f in flows {
            load[engine.steer(iface, f)? as usize] += 1;
        }
        for (t, l) in total.iter_mut().zip(&load) {
            *t += l;
        }
        per_interface.insert(iface, crate::sim::max_mean(&load));
    }
    let sum: u64 = total.iter().sum();
    Ok(DistributionScore {
        shares: total
            .iter()
            .map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
            .collect(),
        max_mean: per_interface.values().copied().fold(0.0, f64::max),
        per_interface,
    })
}

/// Variable layout: key bit `p` of the `n`-th interface is `n * key_bits + p`.
struct Layout {
    ifaces: Vec<IfaceId>,
    key_bits: usize,
}

impl Layout {
    fn var(&self, iface: IfaceId, pos: usize) -> usize {
        let n = self.ifaces.binary_search(&iface).expect("interface in layout");
        n * self.key_bits + pos
    }

    fn vars(&self) -> usize {
        self.ifaces.len() * self.key_bits
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// The equations every key must satisfy, one list of variables per equation.
fn hard_equations(
    constraints: &PairConstraintSet,
    fieldsets: &BTreeMap<IfaceId, FieldSet>,
    layout: &Layout,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for p in &constraints.pairs {
        let (Some(fi), Some(fj)) = (fieldsets.get(&p.i), fieldsets.get(&p.j)) else {
            return Err(Error::Mismatch(format!(
                "constraints mention interfaces {} and {}, field sets cover {:?}",
                p.i,
                p.j,
                fieldsets.keys().collect::<Vec<_>>()
            )));
        };
        let (ni, nj) = (fi.total_bits(), fj.total_bits());
        for d in &p.disjuncts {
            // input bits of d are 0..ni, those of d' are ni..ni+nj
            let mut parent: Vec<usize> = (0..ni + nj).collect();
            for e in &d.eqs {
                let (Some(a), Some(b)) = (fi.offset_of(e.left.field), fj.offset_of(e.right.field)) else {
                    return Err(Error::Mismatch(format!(
                        "constraint {} = {} uses a field outside the selected field sets",
                        e.left, e.right
                    )));
                };
                for k in 0..e.left.len.min(e.right.len) as usize {
                    let x = find(&mut parent, a + e.left.off as usize + k);
                    let y = find(&mut parent, ni + b + e.right.off as usize + k);
                    parent[x] = y;
                }
            }
            let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for n in 0..ni + nj {
                let r = find(&mut parent, n);
                comps.entry(r).or_default().push(n);
            }
            for members in comps.values() {
                for b in 0..HASH_BITS {
                    out.push(
                        members
                            .iter()
                            .map(|&n| {
                                if n < ni {
                                    layout.var(p.i, n + b)
                                } else {
                                    layout.var(p.j, n - ni + b)
                                }
                            })
                            .collect(),
                    );
                }
            }
        }
    }
    Ok(out)
}

/// Conflict cores larger than this many rebuilds are resolved by dropping
/// only the newest soft equation.
const MAX_REBUILDS: usize = 64;

/// One diagnosis-loop run: returns the key bits of every interface.
fn candidate(hard: &System, vars: usize, soft: SoftPolicy, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let target: Vec<bool> = (0..vars).map(|_| rng.gen_bool(soft.ones)).collect();
    let mut order: Vec<usize> = (0..vars).collect();
    order.shuffle(rng);
    let mut active = vec![true; vars];
    let mut rebuilds = 0;
    let system = 'outer: loop {
        let mut sys = hard.clone();
        for &v in &order {
            if !active[v] {
                continue;
            }
            let Err(mut core) = sys.add(&[v], target[v], Some(v)) else {
                continue;
            };
            if rebuilds >= MAX_REBUILDS {
                active[v] = false;
                continue;
            }
            core.shuffle(rng);
            core.truncate(core.len().div_ceil(2));
            for &c in &core {
                active[c] = false;
            }
            if core.iter().any(|&c| c != v) {
                rebuilds += 1;
                continue 'outer;
            }
        }
        break sys;
    };
    let free: Vec<bool> = (0..vars).map(|_| rng.gen_bool(soft.ones)).collect();
    system.solve(|v| free[v])
}

fn bundle_from_bits(
    bits: &[bool],
    layout: &Layout,
    fieldsets: &BTreeMap<IfaceId, FieldSet>,
    table: &IndirectionTable,
    cores: usize,
    provenance: &Provenance,
) -> RssConfigBundle {
    let interfaces = layout
        .ifaces
        .iter()
        .enumerate()
        .map(|(n, &iface)| {
            let key = RssKey::from_bits(&bits[n * layout.key_bits..(n + 1) * layout.key_bits]);
            (
                iface,
                InterfaceConfig {
                    key,
                    fieldset: fieldsets[&iface].clone(),
                    table: table.clone(),
                },
            )
        })
        .collect();
    RssConfigBundle {
        cores,
        interfaces,
        provenance: provenance.clone(),
    }
}

/// Keys under which every pair of packets satisfying a disjunct hashes
/// equally, checked against `config.score_flows` uniform flows.
pub fn synthesize_keys(
    constraints: &PairConstraintSet,
    fieldsets: &BTreeMap<IfaceId, FieldSet>,
    config: &KeySearchConfig,
) -> Result<RssConfigBundle> {
    if config.workers == 0 {
        return Err(Error::Invalid("key search needs at least one worker".into()));
    }
    if !(0.0..=1.0).contains(&config.soft.ones) {
        return Err(Error::Invalid(format!("soft bias {} is not a probability", config.soft.ones)));
    }
    let layout = Layout {
        ifaces: fieldsets.keys().copied().collect(),
        key_bits: config.key_bytes * 8,
    };
    for fs in fieldsets.values() {
        if fs.total_bits() + HASH_BITS > layout.key_bits {
            return Err(Error::InputTooLong {
                input_bits: fs.total_bits(),
                key_bits: layout.key_bits,
                needed: fs.total_bits() + HASH_BITS,
            });
        }
    }
    let vars = layout.vars();
    let mut hard = System::new(vars, vars);
    for eq in hard_equations(constraints, fieldsets, &layout)? {
        if hard.add(&eq, false, None).is_err() {
            unreachable!("homogeneous equations are always consistent");
        }
    }
    let table = IndirectionTable::round_robin(config.table_size, config.cores)?;
    let provenance = Provenance {
        mode: if constraints.is_empty() { "load-balance" } else { "shared-nothing" }.into(),
        constraints: constraints.digest(),
        seed: config.seed,
    };
    let flows = uniform_flows(config.score_flows, config.seed);

    let mut best: Option<(f64, RssConfigBundle)> = None;
    for round in 0..config.max_restarts.max(1) {
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|s| {
            for w in 0..config.workers {
                let tx = tx.clone();
                let (hard, layout, fieldsets, table, provenance, flows) =
                    (&hard, &layout, fieldsets, &table, &provenance, &flows);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream((round * config.workers + w) as u64);
                    let bits = candidate(hard, vars, config.soft, &mut rng);
                    let bundle = bundle_from_bits(&bits, layout, fieldsets, table, config.cores, provenance);
                    let score = if bundle.interfaces.values().any(|c| c.key.is_zero()) {
                        Ok(f64::INFINITY)
                    } else {
                        bundle
                            .with_cores(config.score_cores)
                            .and_then(|b| score_distribution(&b, flows))
                            .map(|s| s.max_mean)
                    };
                    let _ = tx.send((w, bundle, score));
                });
            }
        });
        drop(tx);
        let mut results: Vec<(usize, RssConfigBundle, Result<f64>)> = rx.into_iter().collect();
        results.sort_by_key(|r| r.0);
        for (_, bundle, score) in results {
            let score = score?;
            if score <= config.threshold {
                let report = verify_keys(&bundle, constraints, config.verify_samples, config.seed);
                if report.violations > 0 {
                    return Err(Error::Invalid(format!("synthesized keys violate constraints: {report}")));
                }
                return Ok(bundle);
            }
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, bundle));
            }
        }
    }
    let reason = match &best {
        Some((s, _)) => format!(
            "{} candidates, best max/mean {s:.3} on {} cores exceeds {}",
            config.max_restarts.max(1) * config.workers,
            config.score_cores,
            config.threshold
        ),
        None => "no candidate produced".into(),
    };
    Err(Error::NoAcceptableKey {
        reason,
        best: best.map(|(_, b)| Box::new(b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::Field;
    use crate::sharding::{Disjunct, Equality, FieldBits};

    fn eq(a: Field, b: Field) -> Equality {
        Equality {
            left: FieldBits::whole(a),
            right: FieldBits::whole(b),
        }
    }

    fn symmetric() -> PairConstraintSet {
        use Field::*;
        let mut c = PairConstraintSet::default();
        c.add(
            0,
            0,
            Disjunct {
                eqs: vec![eq(Ipv4Src, Ipv4Dst), eq(Ipv4Dst, Ipv4Src), eq(L4Src, L4Dst), eq(L4Dst, L4Src)],
                objects: vec!["flows".into()],
            },
        );
        c
    }

    fn quick() -> KeySearchConfig {
        KeySearchConfig {
            workers: 2,
            verify_samples: 2000,
            score_flows: 4000,
            ..KeySearchConfig::default()
        }
    }

    #[test]
    fn symmetric_key_hashes_reversed_tuples_equally() {
        let c = symmetric();
        let fs = select_fieldsets(&c, &NicProfile::e810()).unwrap();
        let bundle = synthesize_keys(&c, &fs, &quick()).unwrap();
        let engine = bundle.engine().unwrap();
        for h in uniform_flows(500, 3) {
            assert_eq!(engine.hash(0, &h).unwrap(), engine.hash(0, &h.swapped()).unwrap());
        }
    }

    #[test]
    fn empty_constraints_give_random_nonzero_keys() {
        let mut c = PairConstraintSet::default();
        c.interfaces = vec![0, 1];
        let fs = select_fieldsets(&c, &NicProfile::e810()).unwrap();
        assert_eq!(fs.len(), 2);
        let bundle = synthesize_keys(&c, &fs, &quick()).unwrap();
        assert_eq!(bundle.provenance.mode, "load-balance");
        assert!(bundle.interfaces.values().all(|i| !i.key.is_zero()));
    }

    #[test]
    fn ports_are_cancelled_for_an_address_only_constraint() {
        let mut c = PairConstraintSet::default();
        c.add(
            1,
            1,
            Disjunct {
                eqs: vec![eq(Field::Ipv4Dst, Field::Ipv4Dst)],
                objects: vec!["buckets".into()],
            },
        );
        let fs = select_fieldsets(&c, &NicProfile::e810()).unwrap();
        assert_eq!(fs[&1].fields().len(), 4, "no address-only option exists");
        let bundle = synthesize_keys(&c, &fs, &quick()).unwrap();
        let engine = bundle.engine().unwrap();
        for mut h in uniform_flows(200, 9) {
            let a = engine.hash(1, &h).unwrap();
            h.ipv4_src ^= 0xdead_beef;
            h.sport = h.sport.wrapping_add(7);
            h.dport ^= 0x5555;
            assert_eq!(engine.hash(1, &h).unwrap(), a);
        }
    }

    #[test]
    fn mac_constraint_has_no_fieldset() {
        let mut c = PairConstraintSet::default();
        c.add(
            0,
            0,
            Disjunct {
                eqs: vec![eq(Field::EthSrc, Field::EthSrc)],
                objects: vec!["macs".into()],
            },
        );
        assert!(matches!(select_fieldsets(&c, &NicProfile::e810()), Err(Error::NoFieldset(_))));
    }

    #[test]
    fn same_seed_same_keys() {
        let c = symmetric();
        let fs = select_fieldsets(&c, &NicProfile::e810()).unwrap();
        let a = synthesize_keys(&c, &fs, &quick()).unwrap();
        let b = synthesize_keys(&c, &fs, &quick()).unwrap();
        assert_eq!(a, b);
        let other = synthesize_keys(&c, &fs, &KeySearchConfig { seed: 5, ..quick() }).unwrap();
        assert_ne!(a.interfaces[&0].key, other.interfaces[&0].key);
    }

    #[test]
    fn single_bit_key_is_rejected() {
        let fs = NicProfile::e810().widest_fieldset().clone();
        let mut bits = vec![false; 416];
        bits[0] = true;
        let bundle = RssConfigBundle {
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
                mode: "test".into(),
                constraints: 0,
                seed: 0,
            },
        };
        let s = score_distribution(&bundle, &uniform_flows(10_000, 1)).unwrap();
        assert!(!s.passes(1.5), "{}", s.max_mean);
        assert!((s.shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn impossible_threshold_returns_best_candidate() {
        let c = symmetric();
        let fs = select_fieldsets(&c, &NicProfile::e810()).unwrap();
        let cfg = KeySearchConfig {
            threshold: 0.5,
            max_restarts: 1,
            ..quick()
        };
        match synthesize_keys(&c, &fs, &cfg) {
            Err(Error::NoAcceptableKey { best: Some(b), .. }) => assert_eq!(b.interfaces.len(), 1),
            other => panic!("{other:?}"),
        }
    }
}
