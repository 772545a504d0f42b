use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::model::{
    check_trace, enumerate_paths, run_packet, Backend, BehaviorLog, LogRecord, NfModel, NodeKind, ObjId, ObjKind,
    ReplyResolver, StateDecl, StateStore, Step, SymExpr,
};
use crate::packet::{CoreId, Trace};
use crate::rss::RssConfigBundle;

use super::{CapacityMode, Metrics, SimConfig, Steering};

/// Per-core size of an object.
pub(crate) fn core_capacity(d: &StateDecl, cfg: &SimConfig) -> usize {
    match (cfg.capacity, d.kind) {
        (CapacityMode::Shard, ObjKind::Map | ObjKind::Dchain) if !d.read_only => d.capacity.div_ceil(cfg.cores),
        _ => d.capacity,
    }
}

/// Objects whose every access is keyed by packet fields alone.
pub fn field_keyed(model: &NfModel) -> BTreeSet<ObjId> {
    let tree = enumerate_paths(model);
    let mut keyed = BTreeSet::new();
    let mut other = BTreeSet::new();
    for n in tree.stateful_nodes() {
        if let NodeKind::Op { obj, key, .. } = &tree.nodes[n].kind {
            if key.is_empty() {
                other.insert(*obj);
            } else if key
                .iter()
                .all(|a| matches!(a.expr, SymExpr::Field(_) | SymExpr::Slice { .. }))
            {
                keyed.insert(*obj);
            } else {
                other.insert(*obj);
            }
        }
    }
    keyed.retain(|o| !other.contains(o) && !model.objects[*o].read_only);
    keyed
}

/// Watches which core touches each packet-keyed entry.
pub(crate) struct Owners {
    objs: BTreeSet<ObjId>,
    owner: HashMap<(ObjId, Vec<u64>), CoreId>,
    pub crossings: u64,
}

impl Owners {
    pub(crate) fn new(model: &NfModel) -> Self {
        Owners {
            objs: field_keyed(model),
            owner: HashMap::new(),
            crossings: 0,
        }
    }

    fn touch(&mut self, obj: ObjId, key: &[u64], core: CoreId) {
        if !self.objs.contains(&obj) {
            return;
        }
        let owner = *self.owner.entry((obj, key.to_vec())).or_insert(core);
        if owner != core {
            self.crossings += 1;
        }
    }
}

struct Tracked<'a> {
    store: &'a mut StateStore,
    owners: &'a mut Owners,
    core: CoreId,
}

impl Backend for Tracked<'_> {
    fn map_get(&mut self, obj: ObjId, key: &[u64], now: u64) -> Step<Option<u64>> {
        self.owners.touch(obj, key, self.core);
        self.store.map_get(obj, key, now)
    }

    fn map_put(&mut self, obj: ObjId, key: Vec<u64>, value: u64, now: u64) -> Step<bool> {
        self.owners.touch(obj, &key, self.core);
        Backend::map_put(self.store, obj, key, value, now)
    }

    fn vector_get(&mut self, obj: ObjId, idx: u64) -> Step<u64> {
        Backend::vector_get(self.store, obj, idx)
    }

    fn vector_put(&mut self, obj: ObjId, idx: u64, value: u64) -> Step<()> {
        Backend::vector_put(self.store, obj, idx, value)
    }

    fn dchain_allocate(&mut self, obj: ObjId, now: u64) -> Step<Option<u64>> {
        self.store.dchain_allocate(obj, now)
    }

    fn dchain_rejuvenate(&mut self, obj: ObjId, idx: u64, now: u64) -> Step<()> {
        self.store.dchain_rejuvenate(obj, idx, now)
    }

    fn sketch_query(&mut self, obj: ObjId, key: &[u64]) -> Step<u64> {
        self.owners.touch(obj, key, self.core);
        Backend::sketch_query(self.store, obj, key)
    }

    fn sketch_touch(&mut self, obj: ObjId, key: &[u64]) -> Step<()> {
        self.owners.touch(obj, key, self.core);
        Backend::sketch_touch(self.store, obj, key)
    }
}

/// Shared-nothing execution with RSS steering from `bundle`.
///
/// A bundle built for a different core count is re-targeted with round-robin
/// tables.
pub fn exec_shared_nothing(
    model: &NfModel,
    bundle: &RssConfigBundle,
    trace: &Trace,
    cfg: &SimConfig,
) -> Result<(BehaviorLog, Metrics)> {
    cfg.check()?;
    let bundle = if bundle.cores == cfg.cores {
        bundle.clone()
    } else {
        bundle.with_cores(cfg.cores)?
    };
    for i in model.iface_ids() {
        if !bundle.interfaces.contains_key(&i) {
            return Err(Error::UnconfiguredInterface(i));
        }
    }
    let engine = bundle.engine()?;
    exec_shared_nothing_with(model, &engine, trace, cfg)
}

/// Shared-nothing execution with any steering function.
pub fn exec_shared_nothing_with(
    model: &NfModel,
    steering: &dyn Steering,
    trace: &Trace,
    cfg: &SimConfig,
) -> Result<(BehaviorLog, Metrics)> {
    cfg.check()?;
    check_trace(model, trace)?;
    let mut stores: Vec<StateStore> = (0..cfg.cores)
        .map(|_| StateStore::new(model, |d| core_capacity(d, cfg), 1))
        .collect();
    let mut owners = Owners::new(model);
    let mut metrics = Metrics::new(cfg.cores);
    let mut replies = ReplyResolver::new(trace);
    let mut records = Vec::with_capacity(trace.len());
    for p in &trace.packets {
        let (iface, header) = replies.input(p);
        let core = steering.steer(iface, &header);
        assert!((core as usize) < cfg.cores, "steering chose core {core} of {}", cfg.cores);
        let mut backend = Tracked {
            store: &mut stores[core as usize],
            owners: &mut owners,
            core,
        };
        let out = run_packet(model, iface, header, p.time, p.size, &mut backend)
            .expect("private state never aborts");
        replies.record(p.id, &out);
        metrics.per_core[core as usize] += 1;
        records.push(LogRecord {
            id: p.id,
            action: out.action,
            header: out.header,
            core,
        });
    }
    metrics.cross_core = owners.crossings;
    Ok((BehaviorLog { records }, metrics))
}
