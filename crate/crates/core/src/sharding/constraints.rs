use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::NfModel;
use crate::packet::{Header, IfaceId};

use super::{FieldBits, ShardingSolution};

/// `left` of the packet at the first interface equals `right` of the packet
/// at the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Equality {
    pub left: FieldBits,
    pub right: FieldBits,
}

impl Equality {
    pub fn swapped(self) -> Self {
        Equality {
            left: self.right,
            right: self.left,
        }
    }
}

/// A conjunction of equalities, contributed by accesses to one object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Disjunct {
    pub eqs: Vec<Equality>,
    pub objects: Vec<String>,
}

impl Disjunct {
    fn swapped(&self) -> Self {
        Disjunct {
            eqs: self.eqs.iter().map(|e| e.swapped()).collect(),
            objects: self.objects.clone(),
        }
    }
}

/// `C_ij`: packets `d` at `i` and `d'` at `j` must meet on one core when
/// any disjunct holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConstraints {
    pub i: IfaceId,
    pub j: IfaceId,
    pub disjuncts: Vec<Disjunct>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConstraintSet {
    /// Interfaces the constraints are over, including unconstrained ones.
    pub interfaces: Vec<IfaceId>,
    /// One entry per `j <= i` with at least one disjunct.
    pub pairs: Vec<PairConstraints>,
}

impl PairConstraintSet {
    /// Adds `d` to `C_ij`, keeping the set symmetric.
    pub fn add(&mut self, i: IfaceId, j: IfaceId, d: Disjunct) {
        let (i, j, d) = if j <= i { (i, j, d) } else { (j, i, d.swapped()) };
        for x in [i, j] {
            if let Err(pos) = self.interfaces.binary_search(&x) {
                self.interfaces.insert(pos, x);
            }
        }
        let pos = match self.pairs.iter().position(|p| p.i == i && p.j == j) {
            Some(p) => p,
            None => {
                self.pairs.push(PairConstraints {
                    i,
                    j,
                    disjuncts: Vec::new(),
                });
                self.pairs.sort_by_key(|p| (p.i, p.j));
                self.pairs.iter().position(|p| p.i == i && p.j == j).unwrap()
            }
        };
        let mut variants = vec![d.clone()];
        if i == j {
            variants.push(d.swapped());
        }
        let list = &mut self.pairs[pos].disjuncts;
        for v in variants {
            match list.iter_mut().find(|x| x.eqs == v.eqs) {
                Some(x) => {
                    for o in v.objects {
                        if !x.objects.contains(&o) {
                            x.objects.push(o);
                        }
                    }
                }
                None => list.push(v),
            }
        }
    }

    /// `C_ij` oriented with `d` at `i`.
    pub fn get(&self, i: IfaceId, j: IfaceId) -> Vec<Disjunct> {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        let Some(p) = self.pairs.iter().find(|p| p.i == a && p.j == b) else {
            return Vec::new();
        };
        if j <= i {
            p.disjuncts.clone()
        } else {
            p.disjuncts.iter().map(Disjunct::swapped).collect()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Whether `d` at `i` and `e` at `j` must meet on one core.
    pub fn holds(&self, i: IfaceId, d: &Header, j: IfaceId, e: &Header) -> bool {
        self.get(i, j).iter().any(|x| {
            x.eqs
                .iter()
                .all(|q| q.left.extract(d.raw(q.left.field)) == q.right.extract(e.raw(q.right.field)))
        })
    }

    pub fn disjunct_count(&self) -> usize {
        self.pairs.iter().map(|p| p.disjuncts.len()).sum()
    }

    /// Bits each interface's packets are constrained on.
    pub fn atoms(&self) -> BTreeMap<IfaceId, Vec<FieldBits>> {
        let mut out: BTreeMap<IfaceId, Vec<FieldBits>> = BTreeMap::new();
        for p in &self.pairs {
            for d in &p.disjuncts {
                for e in &d.eqs {
                    for (iface, b) in [(p.i, e.left), (p.j, e.right)] {
                        let v = out.entry(iface).or_default();
                        if !v.contains(&b) {
                            v.push(b);
                        }
                    }
                }
            }
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("constraint sets serialize");
        let h = Sha256::digest(&json);
        u64::from_be_bytes(h[..8].try_into().unwrap())
    }

    pub fn display<'a>(&'a self, model: &'a NfModel) -> impl fmt::Display + 'a {
        Shown(self, model)
    }
}

struct Shown<'a>(&'a PairConstraintSet, &'a NfModel);

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Shown(set, model) = self;
        if set.pairs.is_empty() {
            return writeln!(f, "(no constraints)");
        }
        for p in &set.pairs {
            let parts: Vec<String> = p
                .disjuncts
                .iter()
                .map(|d| {
                    let eqs: Vec<String> = d.eqs.iter().map(|e| format!("d.{} = d'.{}", e.left, e.right)).collect();
                    format!("({})", eqs.join(" and "))
                })
                .collect();
            writeln!(
                f,
                "C[{}, {}] = {}",
                model.iface_name(p.i),
                model.iface_name(p.j),
                parts.join(" or ")
            )?;
        }
        Ok(())
    }
}

/// Turns the solution's key equalities into per-interface-pair constraints.
pub fn emit_constraints(solution: &ShardingSolution, model: &NfModel) -> PairConstraintSet {
    let mut set = PairConstraintSet::default();
    for i in model.iface_ids().into_iter().chain(solution.fields.keys().copied()) {
        if let Err(pos) = set.interfaces.binary_search(&i) {
            set.interfaces.insert(pos, i);
        }
    }
    for p in &solution.pairs {
        if p.eqs.is_empty() {
            continue;
        }
        set.add(
            p.i,
            p.j,
            Disjunct {
                eqs: p.eqs.iter().map(|&(left, right)| Equality { left, right }).collect(),
                objects: vec![model.objects[p.obj].name.clone()],
            },
        );
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::packet::Field;
    use crate::rss::NicProfile;
    use crate::sharding::{analyze_sharding, SolveOptions};
    use proptest::prelude::*;

    fn constraints(name: &str) -> (PairConstraintSet, NfModel) {
        let m = corpus::bundled().into_iter().find(|e| e.name == name).unwrap().model().unwrap();
        let a = analyze_sharding(&m, &NicProfile::e810(), &SolveOptions::default());
        (emit_constraints(a.solution.as_ref().unwrap_or_else(|| panic!("{name}: {:?}", a.diagnosis)), &m), m)
    }

    fn eq(a: Field, b: Field) -> Equality {
        Equality {
            left: FieldBits::whole(a),
            right: FieldBits::whole(b),
        }
    }

    #[test]
    fn fw_constraints() {
        use Field::*;
        let (c, _) = constraints("fw");
        let same: Vec<Equality> = [Ipv4Src, Ipv4Dst, L4Src, L4Dst].map(|f| eq(f, f)).to_vec();
        let lan = c.get(0, 0);
        assert!(lan.iter().any(|d| d.eqs == same));
        let cross = c.get(1, 0);
        let swapped: Vec<Equality> = [(Ipv4Dst, Ipv4Src), (Ipv4Src, Ipv4Dst), (L4Dst, L4Src), (L4Src, L4Dst)]
            .map(|(a, b)| eq(a, b))
            .to_vec();
        assert!(cross.iter().any(|d| {
            let mut x = d.eqs.clone();
            x.sort();
            let mut y = swapped.clone();
            y.sort();
            x == y
        }), "{cross:?}");
        assert_eq!(c.get(0, 1).len(), cross.len());
        assert!(!c.get(1, 1).is_empty());
    }

    #[test]
    fn policer_is_dst_ip_only() {
        let (c, m) = constraints("policer");
        let wan = m.iface("wan").unwrap();
        assert_eq!(c.pairs.len(), 1);
        assert!(c.get(wan, wan).iter().all(|d| d.eqs == vec![eq(Field::Ipv4Dst, Field::Ipv4Dst)]));
    }

    #[test]
    fn psd_is_src_ip_only() {
        let (c, _) = constraints("psd");
        for p in &c.pairs {
            for d in &p.disjuncts {
                assert_eq!(d.eqs, vec![eq(Field::Ipv4Src, Field::Ipv4Src)]);
            }
        }
    }

    #[test]
    fn symmetric_and_digest_stable() {
        for name in ["fw", "nat", "cl", "policer", "psd"] {
            let (c, _) = constraints(name);
            for &i in &c.interfaces {
                for &j in &c.interfaces {
                    let mut a: Vec<Vec<Equality>> = c.get(i, j).into_iter().map(|d| d.eqs).collect();
                    let mut b: Vec<Vec<Equality>> = c
                        .get(j, i)
                        .into_iter()
                        .map(|d| d.eqs.into_iter().map(Equality::swapped).collect())
                        .collect();
                    a.sort();
                    b.sort();
                    assert_eq!(a, b, "{name} {i} {j}");
                }
            }
            assert_eq!(c.digest(), constraints(name).0.digest());
        }
    }

    fn arb_bits() -> impl Strategy<Value = FieldBits> {
        (0usize..7, 0u32..48, 1u32..48).prop_map(|(f, off, len)| {
            let field = Field::ALL[f];
            let off = off % field.width();
            let len = 1 + (len - 1) % (field.width() - off);
            FieldBits { field, off, len }
        })
    }

    fn arb_header() -> impl Strategy<Value = Header> {
        // tiny domains so that equalities hold often
        (0u64..3, 0u64..3, 0u32..3, 0u32..3, 0u8..2, 0u16..3, 0u16..3).prop_map(|(a, b, c, d, e, f, g)| Header {
            eth_src: a,
            eth_dst: b,
            ipv4_src: c,
            ipv4_dst: d,
            proto: e,
            sport: f,
            dport: g,
        })
    }

    proptest! {
        #[test]
        fn any_set_is_symmetric(
            adds in proptest::collection::vec(
                (0u16..3, 0u16..3, proptest::collection::vec((arb_bits(), arb_bits()), 1..4)),
                0..8,
            ),
            d in arb_header(),
            e in arb_header(),
        ) {
            let mut set = PairConstraintSet::default();
            for (i, j, eqs) in adds {
                let eqs = eqs
                    .into_iter()
                    .map(|(a, b)| {
                        let len = a.len.min(b.len);
                        Equality { left: FieldBits { len, ..a }, right: FieldBits { len, ..b } }
                    })
                    .collect();
                set.add(i, j, Disjunct { eqs, objects: vec!["x".into()] });
            }
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(set.holds(i, &d, j, &e), set.holds(j, &e, i, &d));
                }
            }
        }
    }

    #[test]
    fn round_trips_through_json() {
        let (c, _) = constraints("nat");
        let back: PairConstraintSet = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
