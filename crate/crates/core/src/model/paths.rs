//! Exhaustive execution-path enumeration.
//!
//! Every pipeline becomes a tree whose inner nodes are state operations,
//! header rewrites and branches, and whose leaves are terminal actions. Each
//! node carries the constraints collected on the way to it. Values are
//! symbolic: packet fields as they arrived, results of earlier operations on
//! the same path (by node id), the timestamp and the packet size.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::packet::{mask, Field, Header, IfaceId};

use super::exec::{Action, Backend, Outcome, Step};
use super::{Attr, BinOp, CmpOp, Cond, Expr, NfModel, ObjId, OpKind, Stmt};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymExpr {
    Field(Field),
    Slice { field: Field, off: u32, len: u32 },
    Const(u64),
    Result { node: usize, attr: Attr },
    Time,
    Size,
    Bin(BinOp, Box<SymExpr>, Box<SymExpr>),
    /// `(of >> shift) & mask(len)`: a slice of a rewritten field.
    Bits { of: Box<SymExpr>, shift: u32, len: u32 },
}

impl SymExpr {
    /// Packet fields the value depends on.
    pub fn fields(&self) -> BTreeSet<Field> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| match e {
            SymExpr::Field(f) | SymExpr::Slice { field: f, .. } => {
                out.insert(*f);
            }
            _ => {}
        });
        out
    }

    /// Operation results the value depends on.
    pub fn results(&self) -> Vec<(usize, Attr)> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let SymExpr::Result { node, attr } = e {
                out.push((*node, *attr));
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&SymExpr)) {
        f(self);
        match self {
            SymExpr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            SymExpr::Bits { of, .. } => of.visit(f),
            _ => {}
        }
    }

    /// Concrete value, or `None` when a referenced result is unknown.
    pub fn eval(
        &self,
        header: &Header,
        time: u64,
        size: u64,
        results: &dyn Fn(usize, Attr) -> Option<u64>,
    ) -> Option<u64> {
        Some(match self {
            SymExpr::Field(f) => header.raw(*f),
            SymExpr::Slice { field, off, len } => {
                (header.raw(*field) >> (field.width() - off - len)) & mask(*len)
            }
            SymExpr::Const(v) => *v,
            SymExpr::Result { node, attr } => results(*node, *attr)?,
            SymExpr::Time => time,
            SymExpr::Size => size,
            SymExpr::Bin(op, a, b) => op.apply(
                a.eval(header, time, size, results)?,
                b.eval(header, time, size, results)?,
            ),
            SymExpr::Bits { of, shift, len } => {
                (of.eval(header, time, size, results)? >> shift) & mask(*len)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymAtom {
    pub expr: SymExpr,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymCond {
    Cmp(CmpOp, SymExpr, SymExpr),
    Truth(SymExpr),
}

impl SymCond {
    pub fn eval(
        &self,
        header: &Header,
        time: u64,
        size: u64,
        results: &dyn Fn(usize, Attr) -> Option<u64>,
    ) -> Option<bool> {
        match self {
            SymCond::Cmp(op, a, b) => Some(op.apply(
                a.eval(header, time, size, results)?,
                b.eval(header, time, size, results)?,
            )),
            SymCond::Truth(e) => Some(e.eval(header, time, size, results)? != 0),
        }
    }

    pub fn operands(&self) -> Vec<&SymExpr> {
        match self {
            SymCond::Cmp(_, a, b) => vec![a, b],
            SymCond::Truth(e) => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathConstraint {
    pub cond: SymCond,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Op {
        kind: OpKind,
        obj: ObjId,
        key: Vec<SymAtom>,
        index: Option<SymExpr>,
        value: Option<SymExpr>,
        next: usize,
    },
    Rewrite {
        field: Field,
        value: SymExpr,
        next: usize,
    },
    Branch {
        cond: SymCond,
        then: usize,
        otherwise: usize,
    },
    Forward(IfaceId),
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub iface: IfaceId,
    pub parent: Option<usize>,
    pub kind: NodeKind,
    /// Constraints that hold whenever this node is reached.
    pub constraints: Vec<PathConstraint>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Forward(_) | NodeKind::Drop)
    }

    pub fn children(&self) -> Vec<usize> {
        match &self.kind {
            NodeKind::Op { next, .. } | NodeKind::Rewrite { next, .. } => vec![*next],
            NodeKind::Branch { then, otherwise, .. } => vec![*then, *otherwise],
            NodeKind::Forward(_) | NodeKind::Drop => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTree {
    pub nodes: Vec<TreeNode>,
    pub roots: BTreeMap<IfaceId, usize>,
}

impl ExecutionTree {
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_leaf())
            .collect()
    }

    pub fn leaves_of(&self, iface: IfaceId) -> Vec<usize> {
        self.leaves()
            .into_iter()
            .filter(|&i| self.nodes[i].iface == iface)
            .collect()
    }

    /// Node ids from the root down to `node`.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Every node in the subtree rooted at `node`.
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children());
        }
        out
    }

    pub fn stateful_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Op { .. }))
    }

    /// Executes a packet by walking the tree; returns the outcome, the leaf
    /// reached and the results of the operations on the way.
    pub fn execute<B: Backend + ?Sized>(
        &self,
        iface: IfaceId,
        mut header: Header,
        time: u64,
        size: u16,
        backend: &mut B,
    ) -> Step<(Outcome, usize, BTreeMap<usize, [u64; 2]>)> {
        let mut results: BTreeMap<usize, [u64; 2]> = BTreeMap::new();
        let original = header;
        let mut cur = self.roots[&iface];
        let size = size as u64;
        loop {
            // expressions are over the packet as it arrived
            let lookup = |r: &BTreeMap<usize, [u64; 2]>, n: usize, a: Attr| r.get(&n).map(|v| v[a.slot()]);
            let ev = |e: &SymExpr, r: &BTreeMap<usize, [u64; 2]>| {
                e.eval(&original, time, size, &|n, a| lookup(r, n, a))
                    .expect("tree expressions only reference earlier nodes")
            };
            match &self.nodes[cur].kind {
                NodeKind::Op {
                    kind,
                    obj,
                    key,
                    index,
                    value,
                    next,
                } => {
                    let k: Vec<u64> = key.iter().map(|a| ev(&a.expr, &results) & mask(a.width)).collect();
                    let idx = index.as_ref().map(|e| ev(e, &results));
                    let val = value.as_ref().map(|e| ev(e, &results));
                    let r = match kind {
                        OpKind::MapGet => match backend.map_get(*obj, &k, time)? {
                            Some(v) => [1, v],
                            None => [0, 0],
                        },
                        OpKind::MapPut => [backend.map_put(*obj, k, val.unwrap(), time)? as u64, 0],
                        OpKind::VectorGet => [0, backend.vector_get(*obj, idx.unwrap())?],
                        OpKind::VectorPut => {
                            backend.vector_put(*obj, idx.unwrap(), val.unwrap())?;
                            [0, 0]
                        }
                        OpKind::DchainAllocate => match backend.dchain_allocate(*obj, time)? {
                            Some(i) => [1, i],
                            None => [0, 0],
                        },
                        OpKind::DchainRejuvenate => {
                            backend.dchain_rejuvenate(*obj, idx.unwrap(), time)?;
                            [0, 0]
                        }
                        OpKind::SketchQuery => [0, backend.sketch_query(*obj, &k)?],
                        OpKind::SketchTouch => {
                            backend.sketch_touch(*obj, &k)?;
                            [0, 0]
                        }
                    };
                    results.insert(cur, r);
                    cur = *next;
                }
                NodeKind::Rewrite { field, value, next } => {
                    header.set(*field, ev(value, &results));
                    cur = *next;
                }
                NodeKind::Branch {
                    cond,
                    then,
                    otherwise,
                } => {
                    let c = cond
                        .eval(&original, time, size, &|n, a| lookup(&results, n, a))
                        .expect("branch operands are known");
                    cur = if c { *then } else { *otherwise };
                }
                NodeKind::Forward(i) => {
                    return Ok((
                        Outcome {
                            action: Action::Forward(*i),
                            header,
                        },
                        cur,
                        results,
                    ))
                }
                NodeKind::Drop => {
                    return Ok((
                        Outcome {
                            action: Action::Drop,
                            header,
                        },
                        cur,
                        results,
                    ))
                }
            }
        }
    }
}

#[derive(Clone)]
struct Env {
    /// Symbolic value of each header field, after rewrites so far.
    fields: [SymExpr; 7],
    vars: Vec<Option<usize>>,
}

struct Builder<'m> {
    model: &'m NfModel,
    nodes: Vec<TreeNode>,
    iface: IfaceId,
}

fn field_slot(f: Field) -> usize {
    Field::ALL.iter().position(|x| *x == f).expect("known field")
}

impl<'m> Builder<'m> {
    fn sym(&self, e: &Expr, env: &Env) -> SymExpr {
        match e {
            Expr::Field(f) => env.fields[field_slot(*f)].clone(),
            Expr::Slice { field, off, len } => match &env.fields[field_slot(*field)] {
                SymExpr::Field(f) => SymExpr::Slice {
                    field: *f,
                    off: *off,
                    len: *len,
                },
                other => SymExpr::Bits {
                    of: Box::new(other.clone()),
                    shift: field.width() - off - len,
                    len: *len,
                },
            },
            Expr::Const(v) => SymExpr::Const(*v),
            Expr::Res { var, attr } => SymExpr::Result {
                node: env.vars[*var].expect("validated binding"),
                attr: *attr,
            },
            Expr::Time => SymExpr::Time,
            Expr::Size => SymExpr::Size,
            Expr::Bin(op, a, b) => SymExpr::Bin(*op, Box::new(self.sym(a, env)), Box::new(self.sym(b, env))),
        }
    }

    fn cond(&self, c: &Cond, env: &Env) -> (SymCond, bool) {
        match c {
            Cond::Cmp(op, a, b) => (SymCond::Cmp(*op, self.sym(a, env), self.sym(b, env)), true),
            Cond::Truth(e) => (SymCond::Truth(self.sym(e, env)), true),
            Cond::Not(inner) => {
                let (c, pol) = self.cond(inner, env);
                (c, !pol)
            }
        }
    }

    fn push(&mut self, kind: NodeKind, constraints: &[PathConstraint]) -> usize {
        self.nodes.push(TreeNode {
            iface: self.iface,
            parent: None,
            kind,
            constraints: constraints.to_vec(),
        });
        self.nodes.len() - 1
    }

    fn link(&mut self, parent: usize, child: usize) {
        self.nodes[child].parent = Some(parent);
    }

    /// Builds the subtree for the statements on `stack` (innermost last).
    fn build(&mut self, mut stack: Vec<&'m [Stmt]>, mut env: Env, cons: Vec<PathConstraint>) -> usize {
        let stmt = loop {
            let top = stack.last_mut().expect("validated paths terminate");
            if let Some((s, rest)) = top.split_first() {
                *top = rest;
                break s;
            }
            stack.pop();
        };
        match stmt {
            Stmt::Op(op) => {
                let key = op
                    .key
                    .iter()
                    .map(|a| SymAtom {
                        expr: self.sym(&a.expr, &env),
                        width: a.width,
                    })
                    .collect();
                let index = op.index.as_ref().map(|e| self.sym(e, &env));
                let value = op.value.as_ref().map(|e| self.sym(e, &env));
                let id = self.push(NodeKind::Drop, &cons);
                if let Some(v) = op.var {
                    env.vars[v] = Some(id);
                }
                let next = self.build(stack, env, cons);
                self.link(id, next);
                self.nodes[id].kind = NodeKind::Op {
                    kind: op.kind,
                    obj: op.obj,
                    key,
                    index,
                    value,
                    next,
                };
                id
            }
            Stmt::Rewrite { field, value } => {
                let v = self.sym(value, &env);
                let id = self.push(NodeKind::Drop, &cons);
                env.fields[field_slot(*field)] = v.clone();
                let next = self.build(stack, env, cons);
                self.link(id, next);
                self.nodes[id].kind = NodeKind::Rewrite {
                    field: *field,
                    value: v,
                    next,
                };
                id
            }
            Stmt::If {
                cond,
                then,
                otherwise,
            } => {
                let (c, pol) = self.cond(cond, &env);
                let id = self.push(NodeKind::Drop, &cons);
                let branch = |body: &'m [Stmt], holds: bool, this: &mut Self| {
                    let mut s = stack.clone();
                    s.push(body);
                    let mut k = cons.clone();
                    k.push(PathConstraint {
                        cond: c.clone(),
                        holds,
                    });
                    let child = this.build(s, env.clone(), k);
                    this.link(id, child);
                    child
                };
                let t = branch(then, pol, self);
                let o = branch(otherwise, !pol, self);
                self.nodes[id].kind = NodeKind::Branch {
                    cond: c,
                    then: t,
                    otherwise: o,
                };
                id
            }
            Stmt::Goto(b) => {
                let body: &'m [Stmt] = &self.model.blocks[*b].1;
                self.build(vec![body], env, cons)
            }
            Stmt::Forward(i) => self.push(NodeKind::Forward(*i), &cons),
            Stmt::Drop => self.push(NodeKind::Drop, &cons),
        }
    }
}

/// The complete execution tree of a validated model.
pub fn enumerate_paths(model: &NfModel) -> ExecutionTree {
    let mut nodes = Vec::new();
    let mut roots = BTreeMap::new();
    for (&iface, pipeline) in &model.pipelines {
        let mut b = Builder {
            model,
            nodes: std::mem::take(&mut nodes),
            iface,
        };
        let env = Env {
            fields: Field::ALL.map(SymExpr::Field),
            vars: vec![None; model.vars.len()],
        };
        let root = b.build(vec![pipeline.as_slice()], env, Vec::new());
        roots.insert(iface, root);
        nodes = b.nodes;
    }
    ExecutionTree { nodes, roots }
}
