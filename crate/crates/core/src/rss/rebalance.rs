//! Static indirection-table rebalancing driven by per-entry load.

use crate::packet::CoreId;

use super::IndirectionTable;

/// Load per core given the load observed on every table entry.
pub fn core_loads(table: &IndirectionTable, entry_load: &[u64], cores: usize) -> Vec<u64> {
    let mut loads = vec![0u64; cores];
    for (&core, &load) in table.entries().iter().zip(entry_load) {
        loads[core as usize] += load;
    }
    loads
}

/// Greedy reassignment of table entries between cores.
///
/// Each round takes the most loaded core and the least loaded core and moves
/// the heaviest entry of the former whose move still leaves the receiving core
/// strictly below the donor's current load. The sum of squared core loads drops
/// on every move, so the loop terminates; the maximum core load never grows and
/// entry loads are only re-owned, never changed.
pub fn rebalance_table(table: &IndirectionTable, entry_load: &[u64], cores: usize) -> IndirectionTable {
    assert_eq!(
        entry_load.len(),
        table.len(),
        "histogram needs one bucket per table entry"
    );
    let mut entries = table.entries().to_vec();
    let mut loads = core_loads(table, entry_load, cores);
    loop {
        // ties broken towards the lowest core id for determinism
        let (max_core, max_load) = loads
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, &l)| (c, l))
            .expect("at least one core");
        let (min_core, min_load) = loads
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(c, &l)| (c, l))
            .expect("at least one core");
        if max_core == min_core {
            break;
        }
        let candidate = entries
            .iter()
            .enumerate()
            .filter(|&(i, &c)| {
                c as usize == max_core && entry_load[i] > 0 && min_load + entry_load[i] < max_load
            })
            .max_by(|a, b| entry_load[a.0].cmp(&entry_load[b.0]).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let Some(i) = candidate else { break };
        entries[i] = min_core as CoreId;
        loads[max_core] -= entry_load[i];
        loads[min_core] += entry_load[i];
    }
    IndirectionTable::from_entries(entries, cores).expect("entries stay within core range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max(v: &[u64]) -> u64 {
        v.iter().copied().max().unwrap_or(0)
    }

    /// Optimal makespan by trying every assignment of entries to cores.
    fn exhaustive_best(entry_load: &[u64], cores: usize) -> u64 {
        let n = entry_load.len();
        let mut best = u64::MAX;
        let total = cores.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut loads = vec![0u64; cores];
            for &w in entry_load {
                loads[c % cores] += w;
                c /= cores;
            }
            best = best.min(max(&loads));
        }
        best
    }

    #[test]
    fn balanced_table_unchanged() {
        let t = IndirectionTable::round_robin(16, 4).unwrap();
        let r = rebalance_table(&t, &[5; 16], 4);
        assert_eq!(r, t);
    }

    #[test]
    fn single_owner_uniform_loads() {
        let t = IndirectionTable::from_entries(vec![0; 64], 4).unwrap();
        let r = rebalance_table(&t, &[10; 64], 4);
        let loads = core_loads(&r, &[10; 64], 4);
        let mean = 640 / 4;
        assert!(max(&loads) <= mean + 10, "{loads:?}");
    }

    #[test]
    fn close_to_exhaustive_optimum_on_small_tables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = [2usize, 4, 8][rng.gen_range(0..3)];
            let cores = rng.gen_range(1..=3);
            let loads: Vec<u64> = (0..n).map(|_| rng.gen_range(0..50)).collect();
            let entries = (0..n).map(|_| rng.gen_range(0..cores) as CoreId).collect();
            let t = IndirectionTable::from_entries(entries, cores).unwrap();
            let r = rebalance_table(&t, &loads, cores);
            let got = max(&core_loads(&r, &loads, cores));
            let opt = exhaustive_best(&loads, cores);
            assert!(got >= opt);
            assert!(got <= opt + max(&loads), "got {got}, optimum {opt}, loads {loads:?}");
        }
    }

    proptest! {
        #[test]
        fn never_increases_max_and_keeps_entry_loads(
            loads in proptest::collection::vec(0u64..1000, 32),
            owners in proptest::collection::vec(0u16..5, 32),
        ) {
            let t = IndirectionTable::from_entries(owners, 5).unwrap();
            let before = max(&core_loads(&t, &loads, 5));
            let r = rebalance_table(&t, &loads, 5);
            let after = core_loads(&r, &loads, 5);
            prop_assert!(max(&after) <= before);
            prop_assert_eq!(after.iter().sum::<u64>(), loads.iter().sum::<u64>());
            prop_assert_eq!(r.len(), t.len());
        }
    }
}
