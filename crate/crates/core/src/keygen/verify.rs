//! Sampling oracle: constrained packet pairs must hash equally.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::packet::{Field, Header, IfaceId};
use crate::rss::{RssConfigBundle, RssEngine};
use crate::sharding::{Disjunct, PairConstraintSet};

use super::random_header;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjunctCheck {
    pub i: IfaceId,
    pub j: IfaceId,
    /// Position of the disjunct within `C_ij`.
    pub disjunct: usize,
    pub samples: usize,
    pub violations: usize,
    /// First violating pair, `d` at `i` and `d'` at `j`.
    pub example: Option<(Header, Header)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<DisjunctCheck>,
    pub violations: usize,
    pub control_pairs: usize,
    /// Unconstrained pairs whose hashes are equal.
    pub control_collisions: usize,
}

impl VerificationReport {
    pub fn constrained_pairs(&self) -> usize {
        self.checks.iter().map(|c| c.samples).sum()
    }

    pub fn collision_rate(&self) -> f64 {
        if self.control_pairs == 0 {
            0.0
        } else {
            self.control_collisions as f64 / self.control_pairs as f64
        }
    }

    pub fn is_sound(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violations in {} constrained pairs over {} disjuncts; control collision rate {:.5}",
            self.violations,
            self.constrained_pairs(),
            self.checks.len(),
            self.collision_rate()
        )?;
        if let Some(c) = self.checks.iter().find(|c| c.violations > 0) {
            if let Some((d, e)) = &c.example {
                write!(f, "; e.g. C[{}, {}] #{}: {d:?} vs {e:?}", c.i, c.j, c.disjunct)?;
            }
        }
        Ok(())
    }
}

/// Bit-level equality classes of a disjunct. Each class is a list of
/// `(side, field, shift)`; a sample gives every member of a class one
/// random bit.
struct Plan {
    classes: Vec<Vec<(usize, Field, u32)>>,
}

impl Plan {
    fn new(d: &Disjunct) -> Self {
        let mut index: HashMap<(usize, Field, u32), usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut parent: Vec<usize> = Vec::new();
        let mut node = |key: (usize, Field, u32), parent: &mut Vec<usize>| {
            *index.entry(key).or_insert_with(|| {
                nodes.push(key);
                parent.push(parent.len());
                parent.len() - 1
            })
        };
        let mut links = Vec::new();
        for e in &d.eqs {
            for k in 0..e.left.len.min(e.right.len) {
                let a = node((0, e.left.field, e.left.field.width() - 1 - e.left.off - k), &mut parent);
                let b = node((1, e.right.field, e.right.field.width() - 1 - e.right.off - k), &mut parent);
                links.push((a, b));
            }
        }
        for (a, b) in links {
            let (x, y) = (super::find(&mut parent, a), super::find(&mut parent, b));
            parent[x] = y;
        }
        let mut classes: HashMap<usize, Vec<(usize, Field, u32)>> = HashMap::new();
        for n in 0..nodes.len() {
            let r = super::find(&mut parent, n);
            classes.entry(r).or_default().push(nodes[n]);
        }
        let mut classes: Vec<_> = classes.into_values().collect();
        for c in &mut classes {
            c.sort();
        }
        classes.sort();
        Plan { classes }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [Header; 2] {
        let mut h = [random_header(rng), random_header(rng)];
        let mut pool = 0u64;
        for (n, class) in self.classes.iter().enumerate() {
            if n % 64 == 0 {
                pool = rng.gen();
            }
            let bit = pool >> (n % 64) & 1;
            for &(side, field, shift) in class {
                let v = h[side].raw(field) & !(1 << shift) | bit << shift;
                h[side].set(field, v);
            }
        }
        h
    }
}

fn same_hash(engine: &RssEngine, i: IfaceId, d: &Header, j: IfaceId, e: &Header) -> bool {
    match (engine.hash(i, d), engine.hash(j, e)) {
        (Ok(Some(a)), Ok(Some(b))) => a == b,
        _ => false,
    }
}

/// Draws `samples` pairs per disjunct satisfying it, plus unconstrained
/// control pairs, and hashes both packets of each pair.
pub fn verify_keys(
    bundle: &RssConfigBundle,
    constraints: &PairConstraintSet,
    samples: usize,
    seed: u64,
) -> VerificationReport {
    let engine = bundle.engine().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for p in &constraints.pairs {
        for (n, d) in p.disjuncts.iter().enumerate() {
            let plan = Plan::new(d);
            let mut check = DisjunctCheck {
                i: p.i,
                j: p.j,
                disjunct: n,
                samples,
                violations: 0,
                example: None,
            };
            for _ in 0..samples {
                let [a, b] = plan.sample(&mut rng);
                if !same_hash(&engine, p.i, &a, p.j, &b) {
                    check.violations += 1;
                    check.example.get_or_insert((a, b));
                }
            }
            checks.push(check);
        }
    }
    let ifaces: Vec<IfaceId> = bundle.interfaces.keys().copied().collect();
    let control_pairs = if ifaces.is_empty() { 0 } else { samples.min(100_000) };
    let mut control_collisions = 0;
    for _ in 0..control_pairs {
        let i = ifaces[rng.gen_range(0..ifaces.len())];
        let j = ifaces[rng.gen_range(0..ifaces.len())];
        let (a, b) = (random_header(&mut rng), random_header(&mut rng));
        if same_hash(&engine, i, &a, j, &b) {
            control_collisions += 1;
        }
    }
    VerificationReport {
        violations: checks.iter().map(|c| c.violations).sum(),
        checks,
        control_pairs,
        control_collisions,
    }
}
