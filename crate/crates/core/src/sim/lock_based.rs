use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{
    check_trace, run_packet, Abort, Backend, BehaviorLog, LogRecord, NfModel, ObjId, ReplyResolver, StateStore, Step,
};
use crate::rss::{IndirectionTable, InterfaceConfig, NicProfile, Provenance, RssConfigBundle, RssKey};
use crate::packet::Trace;

use super::{Metrics, SimConfig, Steering};

/// Lock-mode RSS setup: one random nonzero key over the widest field set on
/// every interface, round-robin tables.
pub fn lock_mode_bundle(model: &NfModel, profile: &NicProfile, cores: usize, seed: u64) -> Result<RssConfigBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = loop {
        let k = RssKey::random(profile.key_bytes, &mut rng);
        if !k.is_zero() {
            break k;
        }
    };
    let table = IndirectionTable::round_robin(profile.table_size, cores)?;
    let fieldset = profile.widest_fieldset().clone();
    Ok(RssConfigBundle {
        cores,
        interfaces: model
            .iface_ids()
            .into_iter()
            .map(|i| {
                (
                    i,
                    InterfaceConfig {
                        key: key.clone(),
                        fieldset: fieldset.clone(),
                        table: table.clone(),
                    },
                )
            })
            .collect(),
        provenance: Provenance {
            mode: "locks".into(),
            constraints: 0,
            seed,
        },
    })
}

/// The shared state as seen by one core. In read mode any write aborts;
/// rejuvenation only refreshes the core's own aging copy.
struct Locked<'a> {
    store: &'a mut StateStore,
    core: usize,
    write: bool,
    clears: u64,
}

impl Locked<'_> {
    fn need_write(&self) -> Step<()> {
        if self.write {
            Ok(())
        } else {
            Err(Abort { expiry: false })
        }
    }
}

impl Backend for Locked<'_> {
    fn map_get(&mut self, obj: ObjId, key: &[u64], now: u64) -> Step<Option<u64>> {
        let v = self.store.map_lookup(obj, key);
        if let (Some(idx), Some(chain)) = (v, self.store.expire_link(obj)) {
            if self.store.dchain(chain).expired_locally(idx, now, self.core) {
                if !self.write {
                    return Err(Abort { expiry: true });
                }
                if self.store.dchain(chain).expired(idx, now) {
                    self.store.release(chain, idx);
                    self.clears += 1;
                    return Ok(None);
                }
                self.store.dchain_mut(chain).resync(idx, self.core);
            }
        }
        Ok(v)
    }

    fn map_put(&mut self, obj: ObjId, key: Vec<u64>, value: u64, _now: u64) -> Step<bool> {
        self.need_write()?;
        Ok(StateStore::map_put(self.store, obj, key, value))
    }

    fn vector_get(&mut self, obj: ObjId, idx: u64) -> Step<u64> {
        Ok(StateStore::vector_get(self.store, obj, idx))
    }

    fn vector_put(&mut self, obj: ObjId, idx: u64, value: u64) -> Step<()> {
        self.need_write()?;
        StateStore::vector_put(self.store, obj, idx, value);
        Ok(())
    }

    fn dchain_allocate(&mut self, obj: ObjId, now: u64) -> Step<Option<u64>> {
        self.need_write()?;
        Ok(self.store.allocate(obj, now))
    }

    fn dchain_rejuvenate(&mut self, obj: ObjId, idx: u64, now: u64) -> Step<()> {
        self.store.dchain_mut(obj).rejuvenate(idx, now, self.core);
        Ok(())
    }

    fn sketch_query(&mut self, obj: ObjId, key: &[u64]) -> Step<u64> {
        Ok(StateStore::sketch_query(self.store, obj, key))
    }

    fn sketch_touch(&mut self, obj: ObjId, key: &[u64]) -> Step<()> {
        self.need_write()?;
        StateStore::sketch_touch(self.store, obj, key);
        Ok(())
    }
}

/// Shared state behind per-core read/write locks, steered by a random RSS
/// key over the widest field set of the default NIC profile.
///
/// Every packet first runs holding only its core's read flag. The first
/// write, or an entry that looks expired on the core's aging copy, aborts
/// it; it then takes every core's flag and runs again from the start.
pub fn exec_lock_based(model: &NfModel, trace: &Trace, cfg: &SimConfig) -> Result<(BehaviorLog, Metrics)> {
    let bundle = lock_mode_bundle(model, &NicProfile::default(), cfg.cores, cfg.seed)?;
    exec_lock_based_with(model, &bundle.engine()?, trace, cfg)
}

/// Lock-based execution with any steering function.
pub fn exec_lock_based_with(
    model: &NfModel,
    steering: &dyn Steering,
    trace: &Trace,
    cfg: &SimConfig,
) -> Result<(BehaviorLog, Metrics)> {
    cfg.check()?;
    check_trace(model, trace)?;
    let mut store = StateStore::new(model, |d| d.capacity, cfg.cores);
    let mut metrics = Metrics::new(cfg.cores);
    let mut replies = ReplyResolver::new(trace);
    let mut records = Vec::with_capacity(trace.len());
    for p in &trace.packets {
        let (iface, header) = replies.input(p);
        let core = steering.steer(iface, &header);
        let mut b = Locked {
            store: &mut store,
            core: core as usize,
            write: false,
            clears: 0,
        };
        metrics.read_locks += 1;
        let out = match run_packet(model, iface, header, p.time, p.size, &mut b) {
            Ok(o) => o,
            Err(abort) => {
                metrics.restarts += 1;
                metrics.write_locks += 1;
                if abort.expiry {
                    metrics.expiry_write_locks += 1;
                }
                b.write = true;
                run_packet(model, iface, header, p.time, p.size, &mut b).expect("write mode never aborts")
            }
        };
        metrics.global_clears += b.clears;
        replies.record(p.id, &out);
        metrics.per_core[core as usize] += 1;
        records.push(LogRecord {
            id: p.id,
            action: out.action,
            header: out.header,
            core,
        });
    }
    Ok((BehaviorLog { records }, metrics))
}
