use serde::Serialize;

use crate::error::Result;
use crate::packet::Trace;
use crate::rss::{core_loads, IndirectionTable, RssConfigBundle, DEFAULT_QUEUE};

use super::{max_mean, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewReport {
    /// Fraction of packets per core under `table`.
    pub shares: Vec<f64>,
    pub max_mean: f64,
    /// Packets per indirection-table entry.
    pub entry_load: Vec<u64>,
    /// Packets the field set did not apply to, sent to the default queue.
    pub unhashed: u64,
}

/// Load per table entry of the packets in `trace` under `bundle`'s keys, and
/// the per-core load `table` would give them.
///
/// Packets are taken as recorded in the trace.
pub fn measure_skew(
    metrics: &Metrics,
    table: &IndirectionTable,
    bundle: &RssConfigBundle,
    trace: &Trace,
) -> Result<SkewReport> {
    let engine = bundle.engine()?;
    let cores = metrics.per_core.len().max(table.max_core() as usize + 1);
    let mut entry_load = vec![0u64; table.len()];
    let mut unhashed = 0;
    for p in &trace.packets {
        match engine.hash(p.iface, &p.header)? {
            Some(h) => entry_load[table.index_of(h)] += 1,
            None => unhashed += 1,
        }
    }
    let mut loads = core_loads(table, &entry_load, cores);
    loads[DEFAULT_QUEUE as usize] += unhashed;
    let total: u64 = loads.iter().sum();
    Ok(SkewReport {
        shares: loads.iter().map(|&l| if total == 0 { 0.0 } else { l as f64 / total as f64 }).collect(),
        max_mean: max_mean(&loads),
        entry_load,
        unhashed,
    })
}
