use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::{Attr, CmpOp, ExecutionTree, NfModel, NodeKind, ObjId, OpKind, SymAtom, SymCond, SymExpr};
use crate::packet::{mask, Field, IfaceId};
use crate::rss::NicProfile;

use super::interchange::validate_sharding;
use super::{list, Diagnosis, FieldBits, Reason, Rule, ShardSpec, ShardingSolution, StatefulReport, Verdict};

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Simulated traces used to confirm an interchangeable constraint.
    pub trials: usize,
    pub seed: u64,
    /// Look for interchangeable constraints beyond the declared ones.
    pub search: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            trials: 12,
            seed: 1,
            search: true,
        }
    }
}

/// Packets `d` at `i` and `d'` at `j` must meet on one core when every
/// `(a, b)` in `eqs` has `d.a == d'.b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub(crate) struct Pair {
    pub obj: ObjId,
    pub i: IfaceId,
    pub j: IfaceId,
    pub eqs: Vec<(FieldBits, FieldBits)>,
}

#[derive(Debug, Clone)]
enum Part {
    Bits(FieldBits),
    Const(u64),
    Opaque(String),
}

enum Keying {
    Satellite(String),
    Direct(Vec<Part>, String),
    Unstored,
}

#[derive(Debug, Clone)]
enum Outcome {
    Satellite(String),
    Pairs(Vec<Pair>),
    Blocked(Reason),
}

#[derive(Debug, Clone)]
struct Candidate {
    obj: ObjId,
    left: (IfaceId, Vec<FieldBits>),
    right: (IfaceId, Vec<FieldBits>),
    declared: bool,
}

impl Candidate {
    fn pairs(&self) -> Vec<Pair> {
        let (i, l) = &self.left;
        let (j, r) = &self.right;
        let ident = |v: &[FieldBits]| v.iter().map(|b| (*b, *b)).collect::<Vec<_>>();
        let mut out = vec![Pair {
            obj: self.obj,
            i: *i,
            j: *i,
            eqs: ident(l),
        }];
        if (i, l) != (j, r) {
            out.push(Pair {
                obj: self.obj,
                i: *j,
                j: *j,
                eqs: ident(r),
            });
            out.push(Pair {
                obj: self.obj,
                i: *i,
                j: *j,
                eqs: l.iter().copied().zip(r.iter().copied()).collect(),
            });
        }
        out
    }

    fn describe(&self, model: &NfModel) -> String {
        format!(
            "{}({}) = {}({})",
            model.iface_name(self.left.0),
            list(&self.left.1),
            model.iface_name(self.right.0),
            list(&self.right.1)
        )
    }
}

#[derive(Debug, Clone)]
enum Choice {
    Original(Vec<Pair>),
    Alternative(Candidate),
}

type Chosen = BTreeMap<IfaceId, BTreeMap<Field, u64>>;

struct Solver<'a> {
    tree: &'a ExecutionTree,
    model: &'a NfModel,
    profile: &'a NicProfile,
    /// Allocation node -> maps its index is stored in.
    stored: BTreeMap<usize, Vec<ObjId>>,
    /// Maps whose values are always dchain indices.
    index_maps: BTreeSet<ObjId>,
}

fn bit_of(b: &FieldBits, k: u32) -> u64 {
    1u64 << (b.field.width() - b.off - 1 - k)
}

fn runs(fields: &BTreeMap<Field, u64>) -> Vec<FieldBits> {
    let mut out = Vec::new();
    for (&f, &m) in fields {
        let w = f.width();
        let mut k = 0;
        while k < w {
            if m & (1 << (w - 1 - k)) != 0 {
                let start = k;
                while k < w && m & (1 << (w - 1 - k)) != 0 {
                    k += 1;
                }
                out.push(FieldBits {
                    field: f,
                    off: start,
                    len: k - start,
                });
            } else {
                k += 1;
            }
        }
    }
    out
}

fn side_masks(p: &Pair) -> (BTreeMap<Field, u64>, BTreeMap<Field, u64>) {
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for (x, y) in &p.eqs {
        *a.entry(x.field).or_insert(0) |= x.mask();
        *b.entry(y.field).or_insert(0) |= y.mask();
    }
    (a, b)
}

fn intersect(into: &mut Option<BTreeMap<Field, u64>>, side: &BTreeMap<Field, u64>) {
    match into {
        None => *into = Some(side.clone()),
        Some(cur) => {
            for (f, m) in cur.iter_mut() {
                *m &= side.get(f).copied().unwrap_or(0);
            }
            cur.retain(|_, m| *m != 0);
        }
    }
}

impl<'a> Solver<'a> {
    fn new(tree: &'a ExecutionTree, model: &'a NfModel, profile: &'a NicProfile) -> Self {
        let ops: Vec<(usize, OpKind, ObjId, Option<&SymExpr>)> = tree
            .stateful_nodes()
            .map(|n| match &tree.nodes[n].kind {
                NodeKind::Op { kind, obj, value, .. } => (n, *kind, *obj, value.as_ref()),
                _ => unreachable!(),
            })
            .collect();
        let mut stored = BTreeMap::new();
        for &(n, kind, _, _) in &ops {
            if kind != OpKind::DchainAllocate {
                continue;
            }
            let idx = SymExpr::Result {
                node: n,
                attr: Attr::Index,
            };
            let mut maps: Vec<ObjId> = tree
                .subtree(n)
                .into_iter()
                .filter_map(|s| match &tree.nodes[s].kind {
                    NodeKind::Op {
                        kind: OpKind::MapPut,
                        obj,
                        value: Some(v),
                        ..
                    } if *v == idx => Some(*obj),
                    _ => None,
                })
                .collect();
            maps.sort();
            maps.dedup();
            if !maps.is_empty() {
                stored.insert(n, maps);
            }
        }
        let mut s = Solver {
            tree,
            model,
            profile,
            stored,
            index_maps: BTreeSet::new(),
        };
        // maps whose every put stores an allocation index, possibly copied
        // from another such map
        let maps: BTreeSet<ObjId> = ops
            .iter()
            .filter(|o| o.1 == OpKind::MapPut)
            .map(|o| o.2)
            .collect();
        loop {
            let next: BTreeSet<ObjId> = maps
                .iter()
                .copied()
                .filter(|m| {
                    ops.iter()
                        .filter(|o| o.1 == OpKind::MapPut && o.2 == *m)
                        .all(|o| o.3.is_some_and(|v| s.is_index(v)))
                })
                .collect();
            if next == s.index_maps {
                break;
            }
            s.index_maps = next;
        }
        s
    }

    fn op_at(&self, n: usize) -> Option<(OpKind, ObjId)> {
        match &self.tree.nodes.get(n)?.kind {
            NodeKind::Op { kind, obj, .. } => Some((*kind, *obj)),
            _ => None,
        }
    }

    /// Whether `e` is a dchain index that some map entry owns.
    fn is_index(&self, e: &SymExpr) -> bool {
        self.satellite(e).is_some()
    }

    fn satellite(&self, e: &SymExpr) -> Option<ObjId> {
        let SymExpr::Result { node, attr } = e else {
            return None;
        };
        match (self.op_at(*node)?, attr) {
            ((OpKind::MapGet, m), Attr::Value) if self.index_maps.contains(&m) => Some(m),
            ((OpKind::DchainAllocate, _), Attr::Index) => self.stored.get(node).map(|m| m[0]),
            _ => None,
        }
    }

    fn name(&self, obj: ObjId) -> &str {
        &self.model.objects[obj].name
    }

    fn describe(&self, e: &SymExpr) -> String {
        match e {
            SymExpr::Field(f) => f.to_string(),
            SymExpr::Slice { field, off, len } => format!("{field}[{off}:{len}]"),
            SymExpr::Const(v) => v.to_string(),
            SymExpr::Result { node, attr } => match self.op_at(*node) {
                Some((k, o)) => format!("{} {}.{}", k.name(), self.name(o), attr.name()),
                None => format!("result {node}"),
            },
            SymExpr::Time => "time".into(),
            SymExpr::Size => "size".into(),
            SymExpr::Bin(op, a, b) => {
                let sym = match op {
                    crate::model::BinOp::Add => "+",
                    crate::model::BinOp::Sub => "-",
                    crate::model::BinOp::Mul => "*",
                    crate::model::BinOp::Min => "min",
                    crate::model::BinOp::Max => "max",
                };
                format!("({} {sym} {})", self.describe(a), self.describe(b))
            }
            SymExpr::Bits { of, shift, len } => {
                format!("bits {shift}..{} of {}", shift + len, self.describe(of))
            }
        }
    }

    fn part(&self, atom: &SymAtom, vector_cap: Option<usize>) -> Part {
        let width = match vector_cap {
            Some(cap) if cap.is_power_of_two() => cap.trailing_zeros(),
            Some(cap) => {
                return match atom.expr {
                    SymExpr::Const(v) => Part::Const(v % cap as u64),
                    _ => Part::Opaque(format!(
                        "{} modulo {cap}",
                        self.describe(&atom.expr)
                    )),
                }
            }
            None => atom.width,
        };
        let low = |b: FieldBits| {
            if width == 0 {
                Part::Const(0)
            } else if width >= b.len {
                Part::Bits(b)
            } else {
                Part::Bits(FieldBits {
                    field: b.field,
                    off: b.off + b.len - width,
                    len: width,
                })
            }
        };
        match &atom.expr {
            SymExpr::Field(f) => low(FieldBits::whole(*f)),
            SymExpr::Slice { field, off, len } => low(FieldBits {
                field: *field,
                off: *off,
                len: *len,
            }),
            SymExpr::Bits { of, shift, len } => match **of {
                SymExpr::Field(f) if shift + len <= f.width() => low(FieldBits {
                    field: f,
                    off: f.width() - shift - len,
                    len: *len,
                }),
                _ => Part::Opaque(self.describe(&atom.expr)),
            },
            SymExpr::Const(v) => Part::Const(v & mask(width)),
            e => Part::Opaque(self.describe(e)),
        }
    }

    fn keying(&self, e: &super::ReportEntry) -> Keying {
        let decl = &self.model.objects[e.obj];
        let described = || {
            e.key
                .iter()
                .map(|a| self.describe(&a.expr))
                .collect::<Vec<_>>()
                .join(", ")
        };
        match e.op {
            OpKind::MapGet | OpKind::MapPut | OpKind::SketchQuery | OpKind::SketchTouch => {
                Keying::Direct(e.key.iter().map(|a| self.part(a, None)).collect(), described())
            }
            OpKind::VectorGet | OpKind::VectorPut | OpKind::DchainRejuvenate => {
                match self.satellite(&e.key[0].expr) {
                    Some(m) => Keying::Satellite(self.name(m).to_string()),
                    None => Keying::Direct(vec![self.part(&e.key[0], Some(decl.capacity))], described()),
                }
            }
            OpKind::DchainAllocate => match self.stored.get(&e.node) {
                Some(m) => Keying::Satellite(self.name(m[0]).to_string()),
                None => Keying::Unstored,
            },
        }
    }

    fn object(&self, obj: ObjId, report: &StatefulReport) -> Outcome {
        let name = self.name(obj).to_string();
        let entries: Vec<&super::ReportEntry> = report.entries.iter().filter(|e| e.obj == obj).collect();
        let keyings: Vec<Keying> = entries.iter().map(|e| self.keying(e)).collect();
        let blocked = |explanation: String| {
            Outcome::Blocked(Reason {
                rule: Rule::R4,
                object: name.clone(),
                explanation,
            })
        };
        if keyings.iter().any(|k| matches!(k, Keying::Unstored)) {
            return blocked(format!(
                "`{name}` hands out indices that no map entry owns, so every packet shares one allocator"
            ));
        }
        let via: Vec<&String> = keyings
            .iter()
            .filter_map(|k| match k {
                Keying::Satellite(m) => Some(m),
                _ => None,
            })
            .collect();
        let direct: Vec<(&super::ReportEntry, &Vec<Part>, &String)> = entries
            .iter()
            .zip(&keyings)
            .filter_map(|(e, k)| match k {
                Keying::Direct(p, d) => Some((*e, p, d)),
                _ => None,
            })
            .collect();
        if direct.is_empty() {
            return Outcome::Satellite(via[0].clone());
        }
        if !via.is_empty() {
            let (e, _, d) = direct[0];
            return blocked(format!(
                "coordination: `{name}` is used at indices handed out through `{}` and, on {}, at an index computed as {d}; every core would need all of its entries",
                via[0],
                self.model.iface_name(e.iface)
            ));
        }
        let mut pairs: Vec<Pair> = Vec::new();
        for (a, (ea, pa, da)) in direct.iter().enumerate() {
            for (eb, pb, db) in &direct[a..] {
                if pa.len() != pb.len() {
                    return blocked(format!("`{name}` is keyed by ({da}) and by ({db}), which do not line up"));
                }
                let mut eqs = Vec::new();
                let mut impossible = false;
                let mut unhashable = BTreeSet::new();
                for (x, y) in pa.iter().zip(pb.iter()) {
                    match (x, y) {
                        (Part::Opaque(o), _) | (_, Part::Opaque(o)) => {
                            return blocked(format!(
                                "`{name}` is keyed by {o}, which is not a packet field"
                            ));
                        }
                        (Part::Const(u), Part::Const(v)) => impossible |= u != v,
                        (Part::Bits(u), Part::Bits(v)) if u.len == v.len => {
                            let bad: Vec<Field> = [u.field, v.field]
                                .into_iter()
                                .filter(|f| !self.profile.is_hashable(*f))
                                .collect();
                            if bad.is_empty() {
                                eqs.push((*u, *v));
                            } else {
                                unhashable.extend(bad);
                            }
                        }
                        (Part::Bits(_), Part::Bits(_)) => {
                            return blocked(format!("`{name}` is keyed by ({da}) and by ({db}), which do not line up"));
                        }
                        _ => {}
                    }
                }
                if impossible {
                    continue;
                }
                if eqs.is_empty() {
                    let msg = if !unhashable.is_empty() {
                        format!(
                            "`{name}` is keyed by {}, which NIC profile `{}` cannot hash",
                            unhashable.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", "),
                            self.profile.name
                        )
                    } else if pa.iter().all(|p| matches!(p, Part::Const(_))) || pb.iter().all(|p| matches!(p, Part::Const(_))) {
                        let side = if pa.iter().all(|p| matches!(p, Part::Const(_))) { ea } else { eb };
                        format!(
                            "`{name}` is accessed with a constant key on {}: every packet touches the same entry",
                            self.model.iface_name(side.iface)
                        )
                    } else {
                        format!(
                            "accesses to `{name}` with ({da}) on {} and ({db}) on {} share no packet field",
                            self.model.iface_name(ea.iface),
                            self.model.iface_name(eb.iface)
                        )
                    };
                    return blocked(msg);
                }
                let p = Pair {
                    obj,
                    i: ea.iface,
                    j: eb.iface,
                    eqs,
                };
                if !pairs.contains(&p) {
                    pairs.push(p);
                }
            }
        }
        Outcome::Pairs(pairs)
    }

    /// Children of a branch as (taken when the condition holds, otherwise).
    fn sides(&self, then: usize, otherwise: usize) -> (usize, usize) {
        match self.tree.nodes[then].constraints.last() {
            Some(c) if !c.holds => (otherwise, then),
            _ => (then, otherwise),
        }
    }

    fn drop_only(&self, node: usize) -> bool {
        self.tree.subtree(node).into_iter().all(|n| match &self.tree.nodes[n].kind {
            NodeKind::Forward(_) => false,
            NodeKind::Op { kind, .. } => !kind.is_write(),
            _ => true,
        })
    }

    /// Looks for a lookup in `obj` whose miss drops and whose hit only
    /// forwards after packet fields match values stored next to the entry
    /// when it was created. Those fields then identify the entry as well.
    fn search(&self, obj: ObjId) -> Vec<Candidate> {
        let t = self.tree;
        let mut out = Vec::new();
        for g in t.stateful_nodes() {
            if self.op_at(g) != Some((OpKind::MapGet, obj)) {
                continue;
            }
            let j = t.nodes[g].iface;
            let found = SymCond::Truth(SymExpr::Result {
                node: g,
                attr: Attr::Found,
            });
            let Some((hit, miss)) = t.subtree(g).into_iter().find_map(|n| match &t.nodes[n].kind {
                NodeKind::Branch { cond, then, otherwise } if *cond == found => Some(self.sides(*then, *otherwise)),
                _ => None,
            }) else {
                continue;
            };
            if !self.drop_only(miss) {
                continue;
            }
            let value = SymExpr::Result {
                node: g,
                attr: Attr::Value,
            };
            let forwards: Vec<usize> = t
                .subtree(hit)
                .into_iter()
                .filter(|&n| matches!(t.nodes[n].kind, NodeKind::Forward(_)))
                .collect();
            if forwards.is_empty() {
                continue;
            }
            let mut guards: Vec<(ObjId, Field)> = Vec::new();
            for b in t.subtree(hit) {
                let NodeKind::Branch {
                    cond: SymCond::Cmp(op, x, y),
                    then,
                    otherwise,
                } = &t.nodes[b].kind
                else {
                    continue;
                };
                let (v, f) = match (x, y) {
                    (SymExpr::Result { node, attr: Attr::Value }, SymExpr::Field(f))
                    | (SymExpr::Field(f), SymExpr::Result { node, attr: Attr::Value }) => (*node, *f),
                    _ => continue,
                };
                let vec = match &t.nodes[v].kind {
                    NodeKind::Op {
                        kind: OpKind::VectorGet,
                        obj,
                        index: Some(i),
                        ..
                    } if *i == value => *obj,
                    _ => continue,
                };
                let (yes, no) = self.sides(*then, *otherwise);
                let (pass, fail) = match op {
                    CmpOp::Eq => (yes, no),
                    CmpOp::Ne => (no, yes),
                    _ => continue,
                };
                if self.drop_only(fail) && forwards.iter().all(|l| t.path(*l).contains(&pass)) {
                    guards.push((vec, f));
                }
            }
            for i in self.model.iface_ids() {
                let mut left = Vec::new();
                let mut right = Vec::new();
                for &(vec, fj) in &guards {
                    let stored: BTreeSet<Field> = t
                        .stateful_nodes()
                        .filter(|&n| t.nodes[n].iface == i)
                        .filter_map(|n| match &t.nodes[n].kind {
                            NodeKind::Op {
                                kind: OpKind::VectorPut,
                                obj: o,
                                index: Some(SymExpr::Result { node: a, attr: Attr::Index }),
                                value: Some(SymExpr::Field(f)),
                                ..
                            } if *o == vec && self.stored.get(a).is_some_and(|m| m.contains(&obj)) => Some(*f),
                            _ => None,
                        })
                        .collect();
                    if stored.len() == 1 {
                        left.push(FieldBits::whole(*stored.iter().next().unwrap()));
                        right.push(FieldBits::whole(fj));
                    }
                }
                let hashable = left.iter().chain(&right).all(|b| self.profile.is_hashable(b.field));
                if !left.is_empty() && hashable {
                    out.push(Candidate {
                        obj,
                        left: (i, left),
                        right: (j, right),
                        declared: false,
                    });
                }
            }
        }
        out
    }

    fn candidates(&self, obj: ObjId, search: bool) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .model
            .interchangeable
            .iter()
            .filter(|c| c.obj == obj)
            .map(|c| Candidate {
                obj,
                left: (c.left.0, c.left.1.iter().map(|f| FieldBits::whole(*f)).collect()),
                right: (c.right.0, c.right.1.iter().map(|f| FieldBits::whole(*f)).collect()),
                declared: true,
            })
            .filter(|c| c.left.1.iter().chain(&c.right.1).all(|b| self.profile.is_hashable(b.field)))
            .collect();
        if search {
            out.extend(self.search(obj));
        }
        out
    }

    /// Per-interface fields compatible with every pair, or the interfaces
    /// left without any.
    fn combine(&self, pairs: &[Pair]) -> Result<Chosen, Vec<IfaceId>> {
        let mut acc: BTreeMap<IfaceId, Option<BTreeMap<Field, u64>>> = BTreeMap::new();
        for p in pairs {
            let (a, b) = side_masks(p);
            intersect(acc.entry(p.i).or_default(), &a);
            intersect(acc.entry(p.j).or_default(), &b);
        }
        let mut chosen: Chosen = acc.into_iter().map(|(k, v)| (k, v.unwrap_or_default())).collect();
        let has = |c: &Chosen, i: IfaceId, f: Field, bit: u64| c[&i].get(&f).is_some_and(|m| m & bit != 0);
        loop {
            let mut changed = false;
            for p in pairs {
                for (a, b) in &p.eqs {
                    for k in 0..a.len {
                        let (ba, bb) = (bit_of(a, k), bit_of(b, k));
                        if has(&chosen, p.i, a.field, ba) != has(&chosen, p.j, b.field, bb) {
                            for (i, f, bit) in [(p.i, a.field, ba), (p.j, b.field, bb)] {
                                if let Some(m) = chosen.get_mut(&i).unwrap().get_mut(&f) {
                                    *m &= !bit;
                                }
                            }
                            changed = true;
                        }
                    }
                }
            }
            for c in chosen.values_mut() {
                c.retain(|_, m| *m != 0);
            }
            if !changed {
                break;
            }
        }
        let empty: Vec<IfaceId> = chosen.iter().filter(|(_, c)| c.is_empty()).map(|(i, _)| *i).collect();
        if empty.is_empty() {
            Ok(chosen)
        } else {
            Err(empty)
        }
    }

    fn restrict(&self, pairs: &[Pair], chosen: &Chosen) -> Vec<Pair> {
        let mut out: Vec<Pair> = Vec::new();
        for p in pairs {
            let mut eqs = Vec::new();
            for (a, b) in &p.eqs {
                let keep = |k: u32| chosen[&p.i].get(&a.field).is_some_and(|m| m & bit_of(a, k) != 0);
                let mut k = 0;
                while k < a.len {
                    if keep(k) {
                        let s = k;
                        while k < a.len && keep(k) {
                            k += 1;
                        }
                        eqs.push((
                            FieldBits { field: a.field, off: a.off + s, len: k - s },
                            FieldBits { field: b.field, off: b.off + s, len: k - s },
                        ));
                    } else {
                        k += 1;
                    }
                }
            }
            let q = Pair { eqs, ..p.clone() };
            if !out.contains(&q) {
                out.push(q);
            }
        }
        out
    }

    fn aligned(&self, chosen: &Chosen, pairs: &[Pair]) -> BTreeMap<IfaceId, Vec<FieldBits>> {
        let mut out = BTreeMap::new();
        let Some(&r) = chosen.keys().next() else {
            return out;
        };
        let base = runs(&chosen[&r]);
        for (&i, c) in chosen {
            let mut own = runs(c);
            if i != r {
                let partner = |x: &FieldBits| -> Option<usize> {
                    pairs.iter().find_map(|p| {
                        p.eqs.iter().find_map(|(a, b)| {
                            let (mine, theirs) = if p.i == i && p.j == r {
                                (a, b)
                            } else if p.i == r && p.j == i {
                                (b, a)
                            } else {
                                return None;
                            };
                            (mine.field == x.field && mine.off <= x.off && x.off < mine.off + mine.len)
                                .then(|| base.iter().position(|y| y.field == theirs.field))
                                .flatten()
                        })
                    })
                };
                own.sort_by_key(|x| (partner(x).unwrap_or(usize::MAX), *x));
            }
            out.insert(i, own);
        }
        out
    }

    fn needs(&self, pairs: &[Pair], obj: ObjId, iface: IfaceId) -> String {
        let mut m: BTreeMap<Field, u64> = BTreeMap::new();
        for p in pairs.iter().filter(|p| p.obj == obj) {
            let (a, b) = side_masks(p);
            for (side, i) in [(a, p.i), (b, p.j)] {
                if i == iface {
                    for (f, v) in side {
                        *m.entry(f).or_insert(0) |= v;
                    }
                }
            }
        }
        list(&runs(&m))
    }

    fn r3(&self, pairs: &[Pair], ifaces: &[IfaceId]) -> Vec<Reason> {
        ifaces
            .iter()
            .map(|&i| {
                let objs: BTreeSet<ObjId> = pairs.iter().filter(|p| p.i == i || p.j == i).map(|p| p.obj).collect();
                let needs: Vec<String> = objs
                    .iter()
                    .map(|&o| format!("`{}` needs {}", self.name(o), self.needs(pairs, o, i)))
                    .collect();
                let local: Vec<Pair> = pairs.iter().filter(|p| p.i == i && p.j == i).cloned().collect();
                let why = if !local.is_empty() && self.combine(&local).is_ok() {
                    "the fields they share have no counterpart among the fields required where they meet packets from other interfaces"
                } else {
                    "no packet field is common to all of them"
                };
                Reason {
                    rule: Rule::R3,
                    object: objs.iter().map(|&o| self.name(o)).collect::<Vec<_>>().join(", "),
                    explanation: format!("on {}, {}; {why}", self.model.iface_name(i), needs.join(" and ")),
                }
            })
            .collect()
    }
}

const MAX_COMBINATIONS: usize = 64;

/// Applies R1-R5 to the filtered report.
pub fn solve_sharding(
    report: &StatefulReport,
    tree: &ExecutionTree,
    model: &NfModel,
    profile: &NicProfile,
    opts: &SolveOptions,
) -> Result<ShardingSolution, Diagnosis> {
    let s = Solver::new(tree, model, profile);
    let mut satellites = Vec::new();
    let mut options: Vec<(ObjId, Vec<Choice>)> = Vec::new();
    let mut blocked: Vec<Reason> = Vec::new();
    for obj in report.objects() {
        match s.object(obj, report) {
            Outcome::Satellite(m) => satellites.push(Reason {
                rule: Rule::R1,
                object: s.name(obj).to_string(),
                explanation: format!("reached only through entries of `{m}`, so it follows that sharding"),
            }),
            Outcome::Pairs(p) => {
                let mut v = vec![Choice::Original(p)];
                v.extend(s.candidates(obj, opts.search).into_iter().map(Choice::Alternative));
                options.push((obj, v));
            }
            Outcome::Blocked(r) => {
                let v: Vec<Choice> = s.candidates(obj, opts.search).into_iter().map(Choice::Alternative).collect();
                if v.is_empty() {
                    let mut r = r;
                    r.explanation.push_str("; no interchangeable constraint was found");
                    blocked.push(r);
                } else {
                    blocked.push(r.clone());
                    options.push((obj, v));
                }
            }
        }
    }
    let unrescued: Vec<Reason> = blocked
        .iter()
        .filter(|r| !options.iter().any(|(o, _)| s.name(*o) == r.object))
        .cloned()
        .collect();
    if !unrescued.is_empty() {
        return Err(Diagnosis {
            verdict: Verdict::Infeasible,
            reasons: unrescued,
        });
    }

    let mut r3: Option<Vec<Reason>> = None;
    let mut rejected: Vec<Reason> = Vec::new();
    let mut odo = vec![0usize; options.len()];
    for _ in 0..MAX_COMBINATIONS {
        let picks: Vec<(ObjId, &Choice)> = options.iter().zip(&odo).map(|((o, v), &k)| (*o, &v[k])).collect();
        let pairs: Vec<Pair> = picks
            .iter()
            .flat_map(|(_, c)| match c {
                Choice::Original(p) => p.clone(),
                Choice::Alternative(c) => c.pairs(),
            })
            .collect();
        match s.combine(&pairs) {
            Err(ifaces) => {
                if r3.is_none() {
                    r3 = Some(s.r3(&pairs, &ifaces));
                }
            }
            Ok(chosen) => {
                let restricted = s.restrict(&pairs, &chosen);
                let fields = s.aligned(&chosen, &restricted);
                let alternatives: Vec<&Candidate> = picks
                    .iter()
                    .filter_map(|(_, c)| match c {
                        Choice::Alternative(c) => Some(c),
                        _ => None,
                    })
                    .collect();
                let spec: ShardSpec = fields.clone();
                if alternatives.is_empty() || validate_sharding(model, &spec, opts.trials, opts.seed) {
                    let mut justifications = Vec::new();
                    for (obj, c) in &picks {
                        let name = s.name(*obj).to_string();
                        justifications.push(match c {
                            Choice::Original(p) => {
                                let coarsened = p
                                    .iter()
                                    .any(|q| restricted.iter().any(|r| r.obj == q.obj && r.i == q.i && r.j == q.j && side_masks(r) != side_masks(q) && same_origin(q, r)));
                                let sides: BTreeSet<IfaceId> = p.iter().flat_map(|q| [q.i, q.j]).collect();
                                let keyed: Vec<String> = sides
                                    .iter()
                                    .map(|&i| format!("{} ({})", model.iface_name(i), s.needs(p, *obj, i)))
                                    .collect();
                                if coarsened {
                                    let shard: Vec<String> = sides
                                        .iter()
                                        .map(|&i| format!("{} ({})", model.iface_name(i), list(&fields[&i])))
                                        .collect();
                                    Reason {
                                        rule: Rule::R2,
                                        object: name,
                                        explanation: format!(
                                            "keyed by {}; subsumed by the coarser requirement {}",
                                            keyed.join(", "),
                                            shard.join(", ")
                                        ),
                                    }
                                } else {
                                    Reason {
                                        rule: Rule::R1,
                                        object: name,
                                        explanation: format!("packets with equal keys share state: {}", keyed.join(", ")),
                                    }
                                }
                            }
                            Choice::Alternative(c) => {
                                let why = blocked
                                    .iter()
                                    .find(|r| r.object == name)
                                    .map(|r| format!("{}; ", r.explanation))
                                    .unwrap_or_default();
                                Reason {
                                    rule: Rule::R5,
                                    object: name,
                                    explanation: format!(
                                        "{why}replaced by the {} interchangeable constraint {}, confirmed on {} simulated traces",
                                        if c.declared { "declared" } else { "discovered" },
                                        c.describe(model),
                                        opts.trials
                                    ),
                                }
                            }
                        });
                    }
                    justifications.extend(satellites);
                    justifications.sort_by(|a, b| a.object.cmp(&b.object));
                    return Ok(ShardingSolution {
                        fields,
                        justifications,
                        pairs: restricted,
                    });
                }
                for c in alternatives {
                    let r = Reason {
                        rule: Rule::R5,
                        object: s.name(c.obj).to_string(),
                        explanation: format!(
                            "candidate {} changed observable behaviour in simulation",
                            c.describe(model)
                        ),
                    };
                    if !rejected.contains(&r) {
                        rejected.push(r);
                    }
                }
            }
        }
        // advance the odometer, last object fastest
        let mut k = odo.len();
        loop {
            if k == 0 {
                let mut reasons = blocked;
                reasons.extend(r3.unwrap_or_default());
                reasons.extend(rejected);
                return Err(Diagnosis {
                    verdict: Verdict::Infeasible,
                    reasons,
                });
            }
            k -= 1;
            odo[k] += 1;
            if odo[k] < options[k].1.len() {
                break;
            }
            odo[k] = 0;
        }
    }
    let mut reasons = blocked;
    reasons.extend(r3.unwrap_or_default());
    reasons.extend(rejected);
    Err(Diagnosis {
        verdict: Verdict::Infeasible,
        reasons,
    })
}

/// Whether `r` is `q` after restriction (eqs of `r` lie inside those of `q`).
fn same_origin(q: &Pair, r: &Pair) -> bool {
    r.eqs.iter().all(|(a, b)| {
        q.eqs.iter().any(|(x, y)| {
            x.field == a.field && y.field == b.field && x.off <= a.off && a.off + a.len <= x.off + x.len && a.off - x.off == b.off - y.off
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_paths, parse_model};
    use crate::sharding::{build_report, filter_readonly};

    fn solve(text: &str) -> Result<ShardingSolution, Diagnosis> {
        let m = parse_model(text).unwrap();
        let t = enumerate_paths(&m);
        let r = filter_readonly(&build_report(&t), &m);
        solve_sharding(&r, &t, &m, &NicProfile::e810(), &SolveOptions::default())
    }

    const HEAD: &str = "nf-model 1\nname t\ninterface lan 0\ninterface wan 1\npipeline wan\n  forward lan\n";

    fn fields(s: &ShardingSolution, i: IfaceId) -> Vec<Field> {
        s.fields[&i].iter().map(|b| b.field).collect()
    }

    #[test]
    fn same_key_twice_gives_r1() {
        let s = solve(&format!(
            "{HEAD}state m map capacity=8 key-width=96\npipeline lan\n  r = map_get m (ipv4_src ipv4_dst l4_src l4_dst)\n  map_put m (ipv4_src ipv4_dst l4_src l4_dst) = 1\n  forward wan\n"
        ))
        .unwrap();
        use Field::*;
        assert_eq!(fields(&s, 0), vec![Ipv4Src, Ipv4Dst, L4Src, L4Dst]);
        assert_eq!(s.rule(), Rule::R1);
    }

    #[test]
    fn coarser_key_subsumes() {
        let s = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=32\nstate b map capacity=8 key-width=96\npipeline lan\n  map_put a (ipv4_src) = 1\n  map_put b (ipv4_src ipv4_dst l4_src l4_dst) = 1\n  forward wan\n"
        ))
        .unwrap();
        assert_eq!(fields(&s, 0), vec![Field::Ipv4Src]);
        assert_eq!(s.rule(), Rule::R2);
    }

    #[test]
    fn disjoint_keys_are_infeasible() {
        let d = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=32\nstate b map capacity=8 key-width=32\npipeline lan\n  map_put a (ipv4_src) = 1\n  map_put b (ipv4_dst) = 1\n  forward wan\n"
        ))
        .unwrap_err();
        assert_eq!(d.verdict, Verdict::Infeasible);
        assert_eq!(d.reasons[0].rule, Rule::R3);
        assert!(d.reasons[0].object.contains('a') && d.reasons[0].object.contains('b'));
    }

    #[test]
    fn constant_key_is_infeasible() {
        let d = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=8\npipeline lan\n  r = map_get a (7:8)\n  map_put a (7:8) = r.value + 1\n  forward wan\n"
        ))
        .unwrap_err();
        assert_eq!(d.reasons[0].rule, Rule::R4);
        assert!(d.reasons[0].explanation.contains("constant"), "{:?}", d.reasons);
    }

    #[test]
    fn unhashable_key_is_infeasible() {
        let d = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=48\npipeline lan\n  map_put a (eth_src) = 1\n  forward wan\n"
        ))
        .unwrap_err();
        assert_eq!(d.reasons[0].rule, Rule::R4);
        assert!(d.reasons[0].explanation.contains("eth_src"));
    }

    #[test]
    fn unhashable_part_dropped_when_field_remains() {
        let s = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=80\npipeline lan\n  map_put a (eth_src ipv4_src) = 1\n  forward wan\n"
        ))
        .unwrap();
        assert_eq!(fields(&s, 0), vec![Field::Ipv4Src]);
    }

    #[test]
    fn prefix_slice_key() {
        let s = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=24\npipeline lan\n  map_put a (ipv4_src[0:24]) = 1\n  forward wan\n"
        ))
        .unwrap();
        assert_eq!(s.fields[&0], vec![FieldBits { field: Field::Ipv4Src, off: 0, len: 24 }]);
    }

    #[test]
    fn power_of_two_vector_uses_low_bits() {
        let s = solve(&format!(
            "{HEAD}state v vector capacity=256\npipeline lan\n  x = vector_get v [ipv4_src]\n  vector_put v [ipv4_src] = x.value + 1\n  forward wan\n"
        ))
        .unwrap();
        assert_eq!(s.fields[&0], vec![FieldBits { field: Field::Ipv4Src, off: 24, len: 8 }]);
        let d = solve(&format!(
            "{HEAD}state v vector capacity=100\npipeline lan\n  x = vector_get v [ipv4_src]\n  vector_put v [ipv4_src] = x.value + 1\n  forward wan\n"
        ))
        .unwrap_err();
        assert_eq!(d.reasons[0].rule, Rule::R4);
    }

    #[test]
    fn distinct_constants_never_collide() {
        // two fixed entries plus one per source: only the per-source one shards
        let s = solve(&format!(
            "{HEAD}state a map capacity=8 key-width=40\npipeline lan\n  map_put a (1:8 ipv4_src) = 1\n  map_put a (2:8 ipv4_src) = 1\n  forward wan\n"
        ))
        .unwrap();
        assert_eq!(fields(&s, 0), vec![Field::Ipv4Src]);
    }
}
