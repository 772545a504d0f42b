//! Loop-free NF description language, its state structures, the sequential
//! reference executor and the exhaustive path enumerator.
//!
//! The text grammar is documented in `docs/nf-model.md` at the repository root.

mod exec;
mod parse;
mod paths;
mod state;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::packet::{Field, IfaceId};

pub use exec::{
    check_trace, exec_sequential, run_packet, Abort, Action, Backend, BehaviorLog, LogRecord,
    Outcome, ReplyResolver, Step,
};
pub use parse::parse_model;
pub use paths::{
    enumerate_paths, ExecutionTree, NodeKind, PathConstraint, SymAtom, SymCond, SymExpr, TreeNode,
};
pub use state::{DchainState, Instance, MapState, SketchState, StateStore};

pub type ObjId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjKind {
    Map,
    Vector,
    Dchain,
    Sketch,
}

impl ObjKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjKind::Map => "map",
            ObjKind::Vector => "vector",
            ObjKind::Dchain => "dchain",
            ObjKind::Sketch => "sketch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDecl {
    pub name: String,
    pub kind: ObjKind,
    /// Entries for maps, vectors and dchains; columns per row for sketches.
    pub capacity: usize,
    pub key_width: Option<u32>,
    /// For maps: the dchain whose indices this map stores as values. Entries
    /// disappear when their index expires.
    pub expire: Option<ObjId>,
    /// For dchains: ticks after the last touch at which an index expires.
    pub expiry: u64,
    /// For sketches: number of hash rows.
    pub rows: usize,
    pub read_only: bool,
    /// Initial contents: `(key, value)` for maps, `([index], value)` for vectors.
    pub init: Vec<(Vec<u64>, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attr {
    Found,
    Value,
    Ok,
    Index,
}

impl Attr {
    pub fn name(self) -> &'static str {
        match self {
            Attr::Found => "found",
            Attr::Value => "value",
            Attr::Ok => "ok",
            Attr::Index => "index",
        }
    }

    /// Slot of the attribute in a result pair.
    pub(crate) fn slot(self) -> usize {
        match self {
            Attr::Found | Attr::Ok => 0,
            Attr::Value | Attr::Index => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Min,
    Max,
}

impl BinOp {
    /// Wrapping arithmetic except subtraction, which saturates at zero.
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.saturating_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Field(Field),
    /// `len` bits of a field starting `off` bits below its most significant bit.
    Slice { field: Field, off: u32, len: u32 },
    Const(u64),
    /// Attribute of the result bound to variable slot `var`.
    Res { var: usize, attr: Attr },
    Time,
    Size,
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAtom {
    pub expr: Expr,
    pub width: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn apply(self, a: u64, b: u64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cond {
    Cmp(CmpOp, Expr, Expr),
    /// Holds when the expression is nonzero.
    Truth(Expr),
    Not(Box<Cond>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MapGet,
    MapPut,
    VectorGet,
    VectorPut,
    DchainAllocate,
    DchainRejuvenate,
    SketchQuery,
    SketchTouch,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MapGet => "map_get",
            OpKind::MapPut => "map_put",
            OpKind::VectorGet => "vector_get",
            OpKind::VectorPut => "vector_put",
            OpKind::DchainAllocate => "dchain_allocate",
            OpKind::DchainRejuvenate => "dchain_rejuvenate",
            OpKind::SketchQuery => "sketch_query",
            OpKind::SketchTouch => "sketch_touch",
        }
    }

    pub fn is_write(self) -> bool {
        !matches!(self, OpKind::MapGet | OpKind::VectorGet | OpKind::SketchQuery)
    }

    pub fn object_kind(self) -> ObjKind {
        match self {
            OpKind::MapGet | OpKind::MapPut => ObjKind::Map,
            OpKind::VectorGet | OpKind::VectorPut => ObjKind::Vector,
            OpKind::DchainAllocate | OpKind::DchainRejuvenate => ObjKind::Dchain,
            OpKind::SketchQuery | OpKind::SketchTouch => ObjKind::Sketch,
        }
    }

    /// Attributes readable from the bound result.
    pub fn attrs(self) -> &'static [Attr] {
        match self {
            OpKind::MapGet => &[Attr::Found, Attr::Value],
            OpKind::MapPut => &[Attr::Ok],
            OpKind::VectorGet | OpKind::SketchQuery => &[Attr::Value],
            OpKind::DchainAllocate => &[Attr::Ok, Attr::Index],
            OpKind::VectorPut | OpKind::DchainRejuvenate | OpKind::SketchTouch => &[],
        }
    }
}

/// A state operation; which operands are present depends on `kind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateOp {
    pub kind: OpKind,
    pub obj: ObjId,
    pub var: Option<usize>,
    pub key: Vec<KeyAtom>,
    pub index: Option<Expr>,
    pub value: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Op(StateOp),
    Rewrite { field: Field, value: Expr },
    If {
        cond: Cond,
        then: Vec<Stmt>,
        otherwise: Vec<Stmt>,
    },
    Goto(usize),
    Forward(IfaceId),
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interface {
    pub name: String,
    pub id: IfaceId,
}

/// A declared alternative constraint for `obj`: packets at `left.0` and
/// `right.0` whose listed fields agree position by position may share state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interchangeable {
    pub obj: ObjId,
    pub left: (IfaceId, Vec<Field>),
    pub right: (IfaceId, Vec<Field>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NfModel {
    pub name: String,
    pub interfaces: Vec<Interface>,
    pub objects: Vec<StateDecl>,
    /// Variable names by slot.
    pub vars: Vec<String>,
    pub blocks: Vec<(String, Vec<Stmt>)>,
    pub pipelines: BTreeMap<IfaceId, Vec<Stmt>>,
    /// Output fields compared up to a consistent renaming, per output interface.
    pub abstractions: Vec<(IfaceId, Field)>,
    pub interchangeable: Vec<Interchangeable>,
}

impl NfModel {
    pub fn object(&self, name: &str) -> Option<ObjId> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn iface(&self, name: &str) -> Option<IfaceId> {
        self.interfaces.iter().find(|i| i.name == name).map(|i| i.id)
    }

    pub fn iface_name(&self, id: IfaceId) -> String {
        self.interfaces
            .iter()
            .find(|i| i.id == id)
            .map_or_else(|| id.to_string(), |i| i.name.clone())
    }

    pub fn iface_ids(&self) -> Vec<IfaceId> {
        self.interfaces.iter().map(|i| i.id).collect()
    }
}
