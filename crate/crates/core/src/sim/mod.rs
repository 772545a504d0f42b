//! Deterministic multicore execution of an NF model.
//!
//! Packets are dispatched in trace order; each core handles its own packets
//! in FIFO order. Concurrency is modelled, not used: the shared-nothing
//! executor gives every core private state, the lock-based executor shares
//! one state behind a per-core read/write lock with speculative read-only
//! execution.

mod equivalence;
mod lock_based;
mod shared_nothing;
mod skew;
mod traffic;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{CoreId, Field, Header, IfaceId};
use crate::rss::RssEngine;
use crate::sharding::FieldBits;

pub use equivalence::{check_equivalence, flow_ids, Abstraction, EquivalenceReport, Mismatch};
pub use lock_based::{exec_lock_based, exec_lock_based_with, lock_mode_bundle};
pub use shared_nothing::{exec_shared_nothing, exec_shared_nothing_with, field_keyed};
pub use skew::{measure_skew, SkewReport};
pub use traffic::{calibrate_zipf, gen_traffic, Distribution, TrafficSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// Each core gets `total / cores` entries of every map and dchain.
    Shard,
    /// Each core gets the full capacity.
    Replicate,
}

impl FromStr for CapacityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shard" => Ok(CapacityMode::Shard),
            "replicate" => Ok(CapacityMode::Replicate),
            _ => Err(Error::Invalid(format!("unknown capacity mode `{s}`"))),
        }
    }
}

impl fmt::Display for CapacityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapacityMode::Shard => "shard",
            CapacityMode::Replicate => "replicate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cores: usize,
    pub capacity: CapacityMode,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(cores: usize) -> Self {
        SimConfig {
            cores,
            capacity: CapacityMode::Shard,
            seed: 0,
        }
    }

    pub fn replicate(mut self) -> Self {
        self.capacity = CapacityMode::Replicate;
        self
    }

    fn check(&self) -> Result<()> {
        if self.cores == 0 {
            return Err(Error::Invalid("core count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_core: Vec<u64>,
    /// Accesses to a packet-keyed entry from a core other than the one that
    /// first touched it.
    pub cross_core: u64,
    pub read_locks: u64,
    pub write_locks: u64,
    /// Packets aborted in read mode and restarted under the write lock.
    pub restarts: u64,
    /// Write locks taken because an entry looked expired on the local copy.
    pub expiry_write_locks: u64,
    /// Entries released because they had expired on every core's copy.
    pub global_clears: u64,
}

impl Metrics {
    fn new(cores: usize) -> Self {
        Metrics {
            per_core: vec![0; cores],
            ..Default::default()
        }
    }

    pub fn packets(&self) -> u64 {
        self.per_core.iter().sum()
    }

    /// Busiest core's packet count over the mean.
    pub fn max_mean(&self) -> f64 {
        max_mean(&self.per_core)
    }

    pub fn csv_header() -> &'static str {
        "cores,packets,max_mean,cross_core,read_locks,write_locks,restarts,expiry_write_locks,global_clears"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{},{},{},{},{},{}",
            self.per_core.len(),
            self.packets(),
            self.max_mean(),
            self.cross_core,
            self.read_locks,
            self.write_locks,
            self.restarts,
            self.expiry_write_locks,
            self.global_clears
        )
    }
}

pub(crate) fn max_mean(loads: &[u64]) -> f64 {
    let total: u64 = loads.iter().sum();
    if total == 0 || loads.is_empty() {
        return 1.0;
    }
    let mean = total as f64 / loads.len() as f64;
    *loads.iter().max().unwrap() as f64 / mean
}

/// Chooses the core for a packet arriving at an interface.
pub trait Steering {
    fn steer(&self, iface: IfaceId, header: &Header) -> CoreId;
}

impl Steering for RssEngine {
    fn steer(&self, iface: IfaceId, header: &Header) -> CoreId {
        RssEngine::steer(self, iface, header).expect("interfaces checked before simulation")
    }
}

/// Steering by an exact hash of selected header bits, bypassing RSS keys.
///
/// Packets at different interfaces land together whenever their selected
/// bits agree position by position. Interfaces without an entry hash every
/// field.
#[derive(Debug, Clone)]
pub struct Projection {
    pub fields: BTreeMap<IfaceId, Vec<FieldBits>>,
    pub cores: usize,
}

impl Steering for Projection {
    fn steer(&self, iface: IfaceId, header: &Header) -> CoreId {
        let mut h = DefaultHasher::new();
        match self.fields.get(&iface) {
            Some(bits) => {
                for b in bits {
                    b.extract(header.raw(b.field)).hash(&mut h);
                }
            }
            None => {
                for f in Field::ALL {
                    header.raw(f).hash(&mut h);
                }
            }
        }
        (h.finish() % self.cores as u64) as CoreId
    }
}
