//! Stateful report, sharding rules and the packet-pair constraints handed to
//! key synthesis.

mod constraints;
mod interchange;
mod solve;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ExecutionTree, NfModel, NodeKind, ObjId, OpKind, PathConstraint, SymAtom};
use crate::packet::{mask, Field, IfaceId};

pub use constraints::{emit_constraints, Disjunct, Equality, PairConstraintSet, PairConstraints};
pub use interchange::{check_interchangeable, small_domain_trace, validate_sharding, ShardSpec};
pub use solve::{solve_sharding, SolveOptions};

/// A run of bits of one header field; `off` counts from the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FieldBits {
    pub field: Field,
    pub off: u32,
    pub len: u32,
}

impl FieldBits {
    pub fn whole(field: Field) -> Self {
        FieldBits {
            field,
            off: 0,
            len: field.width(),
        }
    }

    pub fn is_whole(&self) -> bool {
        self.off == 0 && self.len == self.field.width()
    }

    /// The selected bits, in place within the field value.
    pub fn mask(&self) -> u64 {
        mask(self.len) << (self.field.width() - self.off - self.len)
    }

    /// Value of these bits in `v`, shifted down.
    pub fn extract(&self, v: u64) -> u64 {
        (v >> (self.field.width() - self.off - self.len)) & mask(self.len)
    }
}

impl fmt::Display for FieldBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_whole() {
            write!(f, "{}", self.field)
        } else {
            write!(f, "{}[{}:{}]", self.field, self.off, self.len)
        }
    }
}

pub(crate) fn list(bits: &[FieldBits]) -> String {
    bits.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportEntry {
    /// Tree node of the operation.
    pub node: usize,
    pub iface: IfaceId,
    pub op: OpKind,
    pub obj: ObjId,
    /// Key for maps and sketches; the index as a single 64-bit atom for
    /// vector accesses and rejuvenation; empty for allocation.
    pub key: Vec<SymAtom>,
    pub access: Access,
    pub constraints: Vec<PathConstraint>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatefulReport {
    pub entries: Vec<ReportEntry>,
}

impl StatefulReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objects(&self) -> Vec<ObjId> {
        let mut v: Vec<ObjId> = self.entries.iter().map(|e| e.obj).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// One entry per stateful node of the tree.
pub fn build_report(tree: &ExecutionTree) -> StatefulReport {
    let entries = tree
        .stateful_nodes()
        .map(|n| {
            let node = &tree.nodes[n];
            let NodeKind::Op {
                kind, obj, key, index, ..
            } = &node.kind
            else {
                unreachable!("stateful node")
            };
            let key = match index {
                Some(e) => vec![SymAtom {
                    expr: e.clone(),
                    width: 64,
                }],
                None => key.clone(),
            };
            ReportEntry {
                node: n,
                iface: node.iface,
                op: *kind,
                obj: *obj,
                key,
                access: if kind.is_write() {
                    Access::Write
                } else {
                    Access::Read
                },
                constraints: node.constraints.clone(),
            }
        })
        .collect();
    StatefulReport { entries }
}

/// Drops entries on objects that are declared read-only or never written.
pub fn filter_readonly(report: &StatefulReport, model: &NfModel) -> StatefulReport {
    let written: Vec<ObjId> = report
        .entries
        .iter()
        .filter(|e| e.access == Access::Write)
        .map(|e| e.obj)
        .collect();
    StatefulReport {
        entries: report
            .entries
            .iter()
            .filter(|e| !model.objects[e.obj].read_only && written.contains(&e.obj))
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    SharedNothing,
    NoConstraints,
    Infeasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::SharedNothing => "shared-nothing",
            Verdict::NoConstraints => "no-constraints",
            Verdict::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub rule: Rule,
    pub object: String,
    pub explanation: String,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} `{}`: {}", self.rule, self.object, self.explanation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

/// Per-interface sharding fields plus the pair constraints that realise them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShardingSolution {
    /// Interfaces without entries are absent. Lists of different interfaces
    /// are aligned where a constraint relates them.
    pub fields: std::collections::BTreeMap<IfaceId, Vec<FieldBits>>,
    pub justifications: Vec<Reason>,
    pub(crate) pairs: Vec<solve::Pair>,
}

impl ShardingSolution {
    /// The rule that decided the outcome: R5 if an alternative constraint was
    /// used, R2 if some key was coarsened, R1 otherwise.
    pub fn rule(&self) -> Rule {
        self.justifications
            .iter()
            .map(|j| j.rule)
            .filter(|r| matches!(r, Rule::R2 | Rule::R5))
            .max()
            .unwrap_or(Rule::R1)
    }

    pub fn has_constraints(&self) -> bool {
        !self.pairs.is_empty()
    }

    pub fn spec(&self) -> ShardSpec {
        self.fields.clone()
    }
}

/// Everything the analysis derives from a model.
#[derive(Debug, Clone)]
pub struct ShardingAnalysis {
    pub tree: ExecutionTree,
    pub report: StatefulReport,
    pub filtered: StatefulReport,
    pub solution: Option<ShardingSolution>,
    pub diagnosis: Diagnosis,
}

pub fn analyze_sharding(
    model: &NfModel,
    profile: &crate::rss::NicProfile,
    opts: &SolveOptions,
) -> ShardingAnalysis {
    let tree = crate::model::enumerate_paths(model);
    let report = build_report(&tree);
    let filtered = filter_readonly(&report, model);
    let (solution, diagnosis) = if filtered.is_empty() {
        let reasons = report
            .objects()
            .into_iter()
            .map(|o| Reason {
                rule: Rule::R1,
                object: model.objects[o].name.clone(),
                explanation: "only read, never written; needs no sharding".into(),
            })
            .collect();
        (
            None,
            Diagnosis {
                verdict: Verdict::NoConstraints,
                reasons,
            },
        )
    } else {
        match solve_sharding(&filtered, &tree, model, profile, opts) {
            Ok(s) => {
                let verdict = if s.has_constraints() {
                    Verdict::SharedNothing
                } else {
                    Verdict::NoConstraints
                };
                let reasons = s.justifications.clone();
                (Some(s), Diagnosis { verdict, reasons })
            }
            Err(d) => (None, d),
        }
    };
    ShardingAnalysis {
        tree,
        report,
        filtered,
        solution,
        diagnosis,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::model::enumerate_paths;

    fn load(name: &str) -> NfModel {
        corpus::bundled()
            .into_iter()
            .find(|e| e.name == name)
            .unwrap()
            .model()
            .unwrap()
    }

    #[test]
    fn nop_report_is_empty() {
        assert!(build_report(&enumerate_paths(&load("nop"))).is_empty());
    }

    #[test]
    fn sbridge_entries_are_all_read_only() {
        let m = load("sbridge");
        let r = build_report(&enumerate_paths(&m));
        assert!(!r.is_empty());
        assert!(r.entries.iter().all(|e| m.objects[e.obj].read_only));
        assert!(filter_readonly(&r, &m).is_empty());
    }

    #[test]
    fn fw_report_map_entries() {
        let m = load("fw");
        let r = build_report(&enumerate_paths(&m));
        let flows = m.object("flows").unwrap();
        let on_map: Vec<(IfaceId, OpKind)> = r
            .entries
            .iter()
            .filter(|e| e.obj == flows)
            .map(|e| (e.iface, e.op))
            .collect();
        assert_eq!(
            on_map,
            vec![(0, OpKind::MapGet), (0, OpKind::MapPut), (1, OpKind::MapGet)]
        );
        assert_eq!(filter_readonly(&r, &m), r);
    }

    #[test]
    fn static_table_filtered_flow_map_kept() {
        let text = "nf-model 1\nname t\ninterface lan 0\ninterface wan 1\n\
state routes map capacity=16 key-width=32\n\
state flows map capacity=16 key-width=32\n\
pipeline lan\n  r = map_get routes (ipv4_dst)\n  map_put flows (ipv4_src) = r.value\n  forward wan\n\
pipeline wan\n  forward lan\n";
        let m = crate::model::parse_model(text).unwrap();
        let r = filter_readonly(&build_report(&enumerate_paths(&m)), &m);
        assert_eq!(r.objects(), vec![m.object("flows").unwrap()]);
    }

    #[test]
    fn field_bits_masks() {
        let b = FieldBits {
            field: Field::Ipv4Src,
            off: 0,
            len: 24,
        };
        assert_eq!(b.mask(), 0xffff_ff00);
        assert_eq!(b.extract(0x0a0b0c0d), 0x0a0b0c);
        assert_eq!(b.to_string(), "ipv4_src[0:24]");
    }
}
