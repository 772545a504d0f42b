use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{mask, CoreId, Header, IfaceId, Packet, Trace};

use super::{Cond, Expr, KeyAtom, NfModel, ObjId, OpKind, StateOp, StateStore, Stmt};

/// Raised by a backend that cannot perform an operation in its current mode;
/// the executor restarts the packet after taking the write lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Abort {
    /// The write was needed to expire an entry.
    pub expiry: bool,
}

pub type Step<T> = std::result::Result<T, Abort>;

/// State operations as seen by the interpreter.
pub trait Backend {
    fn map_get(&mut self, obj: ObjId, key: &[u64], now: u64) -> Step<Option<u64>>;
    fn map_put(&mut self, obj: ObjId, key: Vec<u64>, value: u64, now: u64) -> Step<bool>;
    fn vector_get(&mut self, obj: ObjId, idx: u64) -> Step<u64>;
    fn vector_put(&mut self, obj: ObjId, idx: u64, value: u64) -> Step<()>;
    fn dchain_allocate(&mut self, obj: ObjId, now: u64) -> Step<Option<u64>>;
    fn dchain_rejuvenate(&mut self, obj: ObjId, idx: u64, now: u64) -> Step<()>;
    fn sketch_query(&mut self, obj: ObjId, key: &[u64]) -> Step<u64>;
    fn sketch_touch(&mut self, obj: ObjId, key: &[u64]) -> Step<()>;
}

/// Single-instance semantics with lazy expiry on lookup.
impl Backend for StateStore {
    fn map_get(&mut self, obj: ObjId, key: &[u64], now: u64) -> Step<Option<u64>> {
        let v = self.map_lookup(obj, key);
        if let (Some(idx), Some(chain)) = (v, self.expire_link(obj)) {
            if self.dchain(chain).expired(idx, now) {
                self.release(chain, idx);
                return Ok(None);
            }
        }
        Ok(v)
    }

    fn map_put(&mut self, obj: ObjId, key: Vec<u64>, value: u64, _now: u64) -> Step<bool> {
        Ok(StateStore::map_put(self, obj, key, value))
    }

    fn vector_get(&mut self, obj: ObjId, idx: u64) -> Step<u64> {
        Ok(StateStore::vector_get(self, obj, idx))
    }

    fn vector_put(&mut self, obj: ObjId, idx: u64, value: u64) -> Step<()> {
        StateStore::vector_put(self, obj, idx, value);
        Ok(())
    }

    fn dchain_allocate(&mut self, obj: ObjId, now: u64) -> Step<Option<u64>> {
        Ok(self.allocate(obj, now))
    }

    fn dchain_rejuvenate(&mut self, obj: ObjId, idx: u64, now: u64) -> Step<()> {
        self.dchain_mut(obj).rejuvenate(idx, now, 0);
        Ok(())
    }

    fn sketch_query(&mut self, obj: ObjId, key: &[u64]) -> Step<u64> {
        Ok(StateStore::sketch_query(self, obj, key))
    }

    fn sketch_touch(&mut self, obj: ObjId, key: &[u64]) -> Step<()> {
        StateStore::sketch_touch(self, obj, key);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward(IfaceId),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub action: Action,
    pub header: Header,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: u64,
    pub action: Action,
    /// Header after all rewrites.
    pub header: Header,
    pub core: CoreId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorLog {
    pub records: Vec<LogRecord>,
}

impl BehaviorLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Rebuilds reply packets from the executor's own earlier output.
///
/// A packet with `reply_to = r` arrives on the interface `r` left through,
/// with `r`'s final header swapped. If `r` was dropped the packet is taken
/// as recorded in the trace.
#[derive(Debug, Default)]
pub struct ReplyResolver {
    wanted: HashSet<u64>,
    forwarded: HashMap<u64, (IfaceId, Header)>,
}

impl ReplyResolver {
    pub fn new(trace: &Trace) -> Self {
        ReplyResolver {
            wanted: trace.packets.iter().filter_map(|p| p.reply_to).collect(),
            forwarded: HashMap::new(),
        }
    }

    pub fn input(&self, p: &Packet) -> (IfaceId, Header) {
        p.reply_to
            .and_then(|r| self.forwarded.get(&r))
            .map_or((p.iface, p.header), |&(iface, h)| (iface, h.swapped()))
    }

    pub fn record(&mut self, id: u64, out: &Outcome) {
        if let Action::Forward(iface) = out.action {
            if self.wanted.contains(&id) {
                self.forwarded.insert(id, (iface, out.header));
            }
        }
    }
}

struct Interp<'a, B: ?Sized> {
    model: &'a NfModel,
    backend: &'a mut B,
    header: Header,
    time: u64,
    size: u64,
    env: Vec<[u64; 2]>,
}

pub(crate) fn eval_field_slice(header: &Header, e: &Expr) -> Option<u64> {
    match e {
        Expr::Field(f) => Some(header.raw(*f)),
        Expr::Slice { field, off, len } => {
            Some((header.raw(*field) >> (field.width() - off - len)) & mask(*len))
        }
        _ => None,
    }
}

impl<B: Backend + ?Sized> Interp<'_, B> {
    fn eval(&self, e: &Expr) -> u64 {
        match e {
            Expr::Field(_) | Expr::Slice { .. } => eval_field_slice(&self.header, e).unwrap_or(0),
            Expr::Const(v) => *v,
            Expr::Res { var, attr } => self.env[*var][attr.slot()],
            Expr::Time => self.time,
            Expr::Size => self.size,
            Expr::Bin(op, a, b) => op.apply(self.eval(a), self.eval(b)),
        }
    }

    fn key(&self, atoms: &[KeyAtom]) -> Vec<u64> {
        atoms
            .iter()
            .map(|a| self.eval(&a.expr) & mask(a.width))
            .collect()
    }

    fn cond(&self, c: &Cond) -> bool {
        match c {
            Cond::Cmp(op, a, b) => op.apply(self.eval(a), self.eval(b)),
            Cond::Truth(e) => self.eval(e) != 0,
            Cond::Not(c) => !self.cond(c),
        }
    }

    fn op(&mut self, op: &StateOp) -> Step<()> {
        let now = self.time;
        let result = match op.kind {
            OpKind::MapGet => {
                let key = self.key(&op.key);
                match self.backend.map_get(op.obj, &key, now)? {
                    Some(v) => [1, v],
                    None => [0, 0],
                }
            }
            OpKind::MapPut => {
                let key = self.key(&op.key);
                let value = self.eval(op.value.as_ref().expect("map_put value"));
                [self.backend.map_put(op.obj, key, value, now)? as u64, 0]
            }
            OpKind::VectorGet => {
                let idx = self.eval(op.index.as_ref().expect("vector index"));
                [0, self.backend.vector_get(op.obj, idx)?]
            }
            OpKind::VectorPut => {
                let idx = self.eval(op.index.as_ref().expect("vector index"));
                let value = self.eval(op.value.as_ref().expect("vector value"));
                self.backend.vector_put(op.obj, idx, value)?;
                [0, 0]
            }
            OpKind::DchainAllocate => match self.backend.dchain_allocate(op.obj, now)? {
                Some(i) => [1, i],
                None => [0, 0],
            },
            OpKind::DchainRejuvenate => {
                let idx = self.eval(op.index.as_ref().expect("dchain index"));
                self.backend.dchain_rejuvenate(op.obj, idx, now)?;
                [0, 0]
            }
            OpKind::SketchQuery => {
                let key = self.key(&op.key);
                [0, self.backend.sketch_query(op.obj, &key)?]
            }
            OpKind::SketchTouch => {
                let key = self.key(&op.key);
                self.backend.sketch_touch(op.obj, &key)?;
                [0, 0]
            }
        };
        if let Some(var) = op.var {
            self.env[var] = result;
        }
        Ok(())
    }

    fn run(&mut self, stmts: &[Stmt]) -> Step<Option<Action>> {
        for s in stmts {
            match s {
                Stmt::Op(op) => self.op(op)?,
                Stmt::Rewrite { field, value } => {
                    let v = self.eval(value);
                    self.header.set(*field, v);
                }
                Stmt::If {
                    cond,
                    then,
                    otherwise,
                } => {
                    let branch = if self.cond(cond) { then } else { otherwise };
                    if let Some(a) = self.run(branch)? {
                        return Ok(Some(a));
                    }
                }
                Stmt::Goto(b) => {
                    let model = self.model;
                    return self.run(&model.blocks[*b].1);
                }
                Stmt::Forward(i) => return Ok(Some(Action::Forward(*i))),
                Stmt::Drop => return Ok(Some(Action::Drop)),
            }
        }
        Ok(None)
    }
}

/// Runs one packet through the pipeline of `iface`.
pub fn run_packet<B: Backend + ?Sized>(
    model: &NfModel,
    iface: IfaceId,
    header: Header,
    time: u64,
    size: u16,
    backend: &mut B,
) -> Step<Outcome> {
    let pipeline = model
        .pipelines
        .get(&iface)
        .expect("packet interface checked against the model");
    let mut it = Interp {
        model,
        backend,
        header,
        time,
        size: size as u64,
        env: vec![[0; 2]; model.vars.len()],
    };
    let action = it.run(pipeline)?.expect("validated pipelines always terminate");
    Ok(Outcome {
        action,
        header: it.header,
    })
}

/// Every packet must arrive on an interface the model declares.
pub fn check_trace(model: &NfModel, trace: &Trace) -> Result<()> {
    if let Some(p) = trace
        .packets
        .iter()
        .find(|p| !model.pipelines.contains_key(&p.iface))
    {
        return Err(Error::Mismatch(format!(
            "packet {} arrives on interface {}, which `{}` does not declare",
            p.id, p.iface, model.name
        )));
    }
    Ok(())
}

/// Processes the trace in order against a single state instance.
pub fn exec_sequential(model: &NfModel, trace: &Trace) -> Result<BehaviorLog> {
    check_trace(model, trace)?;
    let mut store = StateStore::sequential(model);
    let mut replies = ReplyResolver::new(trace);
    let mut records = Vec::with_capacity(trace.len());
    for p in &trace.packets {
        let (iface, header) = replies.input(p);
        let out = run_packet(model, iface, header, p.time, p.size, &mut store)
            .expect("a plain state store never aborts");
        replies.record(p.id, &out);
        records.push(LogRecord {
            id: p.id,
            action: out.action,
            header: out.header,
            core: 0,
        });
    }
    Ok(BehaviorLog { records })
}
