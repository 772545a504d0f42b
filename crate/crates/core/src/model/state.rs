//! Stateful data structures: exact-match map, vector, index allocator with
//! expiry (dchain) and count-min sketch.

use std::collections::{BTreeSet, HashMap};

use super::{NfModel, ObjId, ObjKind, StateDecl};

#[derive(Debug, Clone)]
pub struct MapState {
    capacity: usize,
    entries: HashMap<Vec<u64>, u64>,
    /// Keys per stored value, kept for maps whose values are dchain indices.
    by_value: Option<HashMap<u64, Vec<Vec<u64>>>>,
}

impl MapState {
    pub fn new(capacity: usize, indexed_by_value: bool) -> Self {
        MapState {
            capacity,
            entries: HashMap::new(),
            by_value: indexed_by_value.then(HashMap::new),
        }
    }

    pub fn get(&self, key: &[u64]) -> Option<u64> {
        self.entries.get(key).copied()
    }

    /// Inserts or overwrites; fails only when inserting into a full map.
    pub fn put(&mut self, key: Vec<u64>, value: u64) -> bool {
        let old = self.entries.get(&key).copied();
        if old.is_none() && self.entries.len() >= self.capacity {
            return false;
        }
        if let Some(index) = &mut self.by_value {
            if let Some(old) = old {
                if let Some(keys) = index.get_mut(&old) {
                    keys.retain(|k| *k != key);
                }
            }
            index.entry(value).or_default().push(key.clone());
        }
        self.entries.insert(key, value);
        true
    }

    /// Removes every entry whose value is `value`.
    pub fn erase_value(&mut self, value: u64) {
        let index = self
            .by_value
            .as_mut()
            .expect("erase by value needs a value index");
        for key in index.remove(&value).unwrap_or_default() {
            self.entries.remove(&key);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Index allocator that records when each index was last touched.
///
/// Each index keeps one last-touch time per copy; with a single copy this is
/// the plain structure. Several copies let each core refresh its own copy
/// without touching shared data. An index is expired when `now` is past
/// `last_touch + expiry` on every copy.
#[derive(Debug, Clone)]
pub struct DchainState {
    capacity: usize,
    expiry: u64,
    next_fresh: usize,
    released: BTreeSet<usize>,
    allocated: Vec<bool>,
    latest: Vec<u64>,
    copies: Vec<Vec<u64>>,
    by_time: BTreeSet<(u64, usize)>,
}

impl DchainState {
    pub fn new(capacity: usize, expiry: u64, copies: usize) -> Self {
        DchainState {
            capacity,
            expiry,
            next_fresh: 0,
            released: BTreeSet::new(),
            allocated: vec![false; capacity],
            latest: vec![0; capacity],
            copies: vec![vec![0; capacity]; copies.max(1)],
            by_time: BTreeSet::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn expiry(&self) -> u64 {
        self.expiry
    }

    pub fn is_allocated(&self, idx: u64) -> bool {
        (idx as usize) < self.capacity && self.allocated[idx as usize]
    }

    pub fn allocated_count(&self) -> usize {
        self.allocated.iter().filter(|a| **a).count()
    }

    fn past(&self, last: u64, now: u64) -> bool {
        now > last.saturating_add(self.expiry)
    }

    /// Lowest free index, without reclaiming expired ones.
    pub fn take_free(&mut self, now: u64) -> Option<u64> {
        let idx = match self.released.first().copied() {
            Some(i) if i < self.next_fresh => {
                self.released.remove(&i);
                i
            }
            _ if self.next_fresh < self.capacity => {
                self.next_fresh += 1;
                self.next_fresh - 1
            }
            _ => return None,
        };
        self.allocated[idx] = true;
        self.touch_all(idx as u64, now);
        Some(idx as u64)
    }

    /// The least recently touched index, if it has expired.
    pub fn oldest_expired(&self, now: u64) -> Option<u64> {
        let &(last, idx) = self.by_time.first()?;
        self.past(last, now).then_some(idx as u64)
    }

    pub fn free(&mut self, idx: u64) {
        let i = idx as usize;
        if self.is_allocated(idx) {
            self.allocated[i] = false;
            self.by_time.remove(&(self.latest[i], i));
            self.released.insert(i);
        }
    }

    /// Sets every copy's last-touch time.
    pub fn touch_all(&mut self, idx: u64, now: u64) {
        let i = idx as usize;
        self.by_time.remove(&(self.latest[i], i));
        self.latest[i] = now;
        for c in &mut self.copies {
            c[i] = now;
        }
        self.by_time.insert((now, i));
    }

    /// Refreshes only `copy`; returns false for an index that is not allocated.
    pub fn rejuvenate(&mut self, idx: u64, now: u64, copy: usize) -> bool {
        if !self.is_allocated(idx) {
            return false;
        }
        let i = idx as usize;
        self.copies[copy][i] = self.copies[copy][i].max(now);
        if now > self.latest[i] {
            self.by_time.remove(&(self.latest[i], i));
            self.latest[i] = now;
            self.by_time.insert((now, i));
        }
        true
    }

    pub fn expired(&self, idx: u64, now: u64) -> bool {
        self.is_allocated(idx) && self.past(self.latest[idx as usize], now)
    }

    pub fn expired_locally(&self, idx: u64, now: u64, copy: usize) -> bool {
        self.is_allocated(idx) && self.past(self.copies[copy][idx as usize], now)
    }

    /// Brings `copy` up to the newest time recorded on any copy.
    pub fn resync(&mut self, idx: u64, copy: usize) {
        let i = idx as usize;
        self.copies[copy][i] = self.latest[i];
    }

    pub fn last_touch(&self, idx: u64, copy: usize) -> u64 {
        self.copies[copy][idx as usize]
    }
}

/// Count-min sketch with independently seeded rows.
#[derive(Debug, Clone)]
pub struct SketchState {
    width: usize,
    rows: Vec<Vec<u32>>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl SketchState {
    pub fn new(width: usize, rows: usize) -> Self {
        SketchState {
            width,
            rows: vec![vec![0; width]; rows],
        }
    }

    fn column(&self, row: usize, key: &[u64]) -> usize {
        let mut h = splitmix(row as u64 ^ 0x5bd1_e995);
        for &k in key {
            h = splitmix(h ^ k);
        }
        (h % self.width as u64) as usize
    }

    pub fn touch(&mut self, key: &[u64]) {
        for r in 0..self.rows.len() {
            let c = self.column(r, key);
            self.rows[r][c] = self.rows[r][c].saturating_add(1);
        }
    }

    pub fn query(&self, key: &[u64]) -> u64 {
        (0..self.rows.len())
            .map(|r| self.rows[r][self.column(r, key)] as u64)
            .min()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub enum Instance {
    Map(MapState),
    Vector(Vec<u64>),
    Dchain(DchainState),
    Sketch(SketchState),
}

/// One instance of every state object of a model.
#[derive(Debug, Clone)]
pub struct StateStore {
    objs: Vec<Instance>,
    read_only: Vec<bool>,
    /// Maps whose values index each dchain.
    linked: Vec<Vec<ObjId>>,
    expire_of: Vec<Option<ObjId>>,
}

impl StateStore {
    /// `capacity` chooses each object's size; `copies` is the number of
    /// per-core last-touch copies kept by dchains.
    pub fn new(model: &NfModel, capacity: impl Fn(&StateDecl) -> usize, copies: usize) -> Self {
        let mut linked = vec![Vec::new(); model.objects.len()];
        for (i, d) in model.objects.iter().enumerate() {
            if let Some(c) = d.expire {
                linked[c].push(i);
            }
        }
        let objs = model
            .objects
            .iter()
            .map(|d| {
                let cap = capacity(d).max(1);
                match d.kind {
                    ObjKind::Map => {
                        let mut m = MapState::new(cap.max(d.init.len()), d.expire.is_some());
                        for (k, v) in &d.init {
                            m.put(k.clone(), *v);
                        }
                        Instance::Map(m)
                    }
                    ObjKind::Vector => {
                        let mut v = vec![0; cap];
                        for (k, val) in &d.init {
                            v[k[0] as usize % cap] = *val;
                        }
                        Instance::Vector(v)
                    }
                    ObjKind::Dchain => Instance::Dchain(DchainState::new(cap, d.expiry, copies)),
                    ObjKind::Sketch => Instance::Sketch(SketchState::new(cap, d.rows)),
                }
            })
            .collect();
        StateStore {
            objs,
            read_only: model.objects.iter().map(|d| d.read_only).collect(),
            linked,
            expire_of: model.objects.iter().map(|d| d.expire).collect(),
        }
    }

    pub fn sequential(model: &NfModel) -> Self {
        StateStore::new(model, |d| d.capacity, 1)
    }

    pub fn instance(&self, obj: ObjId) -> &Instance {
        &self.objs[obj]
    }

    fn check_writable(&self, obj: ObjId) {
        assert!(!self.read_only[obj], "write to read-only object {obj}");
    }

    pub fn expire_link(&self, obj: ObjId) -> Option<ObjId> {
        self.expire_of[obj]
    }

    pub fn map(&self, obj: ObjId) -> &MapState {
        match &self.objs[obj] {
            Instance::Map(m) => m,
            _ => panic!("object {obj} is not a map"),
        }
    }

    fn map_mut(&mut self, obj: ObjId) -> &mut MapState {
        match &mut self.objs[obj] {
            Instance::Map(m) => m,
            _ => panic!("object {obj} is not a map"),
        }
    }

    pub fn dchain(&self, obj: ObjId) -> &DchainState {
        match &self.objs[obj] {
            Instance::Dchain(d) => d,
            _ => panic!("object {obj} is not a dchain"),
        }
    }

    pub fn dchain_mut(&mut self, obj: ObjId) -> &mut DchainState {
        match &mut self.objs[obj] {
            Instance::Dchain(d) => d,
            _ => panic!("object {obj} is not a dchain"),
        }
    }

    /// Frees a dchain index and erases every map entry that refers to it.
    pub fn release(&mut self, chain: ObjId, idx: u64) {
        self.dchain_mut(chain).free(idx);
        for m in self.linked[chain].clone() {
            self.map_mut(m).erase_value(idx);
        }
    }

    pub fn map_lookup(&self, obj: ObjId, key: &[u64]) -> Option<u64> {
        self.map(obj).get(key)
    }

    pub fn map_put(&mut self, obj: ObjId, key: Vec<u64>, value: u64) -> bool {
        self.check_writable(obj);
        self.map_mut(obj).put(key, value)
    }

    pub fn vector_get(&self, obj: ObjId, idx: u64) -> u64 {
        match &self.objs[obj] {
            Instance::Vector(v) => v[(idx % v.len() as u64) as usize],
            _ => panic!("object {obj} is not a vector"),
        }
    }

    pub fn vector_put(&mut self, obj: ObjId, idx: u64, value: u64) {
        self.check_writable(obj);
        match &mut self.objs[obj] {
            Instance::Vector(v) => {
                let n = v.len() as u64;
                v[(idx % n) as usize] = value;
            }
            _ => panic!("object {obj} is not a vector"),
        }
    }

    /// Lowest free index, else the oldest expired one (reclaimed), else none.
    pub fn allocate(&mut self, chain: ObjId, now: u64) -> Option<u64> {
        self.check_writable(chain);
        if let Some(i) = self.dchain_mut(chain).take_free(now) {
            return Some(i);
        }
        let old = self.dchain(chain).oldest_expired(now)?;
        self.release(chain, old);
        self.dchain_mut(chain).take_free(now)
    }

    pub fn sketch_query(&self, obj: ObjId, key: &[u64]) -> u64 {
        match &self.objs[obj] {
            Instance::Sketch(s) => s.query(key),
            _ => panic!("object {obj} is not a sketch"),
        }
    }

    pub fn sketch_touch(&mut self, obj: ObjId, key: &[u64]) {
        self.check_writable(obj);
        match &mut self.objs[obj] {
            Instance::Sketch(s) => s.touch(key),
            _ => panic!("object {obj} is not a sketch"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn map_put_then_get() {
        let mut m = MapState::new(2, false);
        assert!(m.put(vec![1, 2], 7));
        assert_eq!(m.get(&[1, 2]), Some(7));
        assert!(m.put(vec![3], 8));
        assert!(!m.put(vec![4], 9), "full map refuses new keys");
        assert!(m.put(vec![3], 10), "overwrite of an existing key succeeds");
        assert_eq!(m.get(&[3]), Some(10));
    }

    #[test]
    fn erase_by_value() {
        let mut m = MapState::new(8, true);
        m.put(vec![1], 5);
        m.put(vec![2], 5);
        m.put(vec![3], 6);
        m.put(vec![2], 6);
        m.erase_value(5);
        assert_eq!(m.get(&[1]), None);
        assert_eq!(m.get(&[2]), Some(6));
        m.erase_value(6);
        assert!(m.is_empty());
    }

    #[test]
    fn dchain_expiry_boundary() {
        let mut d = DchainState::new(4, 100, 1);
        let i = d.take_free(0).unwrap();
        assert!(!d.expired(i, 100));
        assert!(d.expired(i, 101));
    }

    #[test]
    fn dchain_lowest_free_first() {
        let mut d = DchainState::new(3, 10, 1);
        assert_eq!(d.take_free(0), Some(0));
        assert_eq!(d.take_free(0), Some(1));
        assert_eq!(d.take_free(0), Some(2));
        assert_eq!(d.take_free(0), None);
        d.free(1);
        d.free(0);
        assert_eq!(d.take_free(1), Some(0));
        assert_eq!(d.oldest_expired(11), Some(2), "index 2 untouched since 0");
    }

    #[test]
    fn copies_expire_only_when_all_are_stale() {
        let mut d = DchainState::new(2, 10, 3);
        let i = d.take_free(0).unwrap();
        d.rejuvenate(i, 8, 2);
        assert!(d.expired_locally(i, 15, 0));
        assert!(!d.expired_locally(i, 15, 2));
        assert!(!d.expired(i, 15));
        d.resync(i, 0);
        assert!(!d.expired_locally(i, 15, 0));
        assert!(d.expired(i, 19));
    }

    proptest! {
        #[test]
        fn sketch_never_underestimates(keys in proptest::collection::vec(0u64..50, 1..400)) {
            let mut s = SketchState::new(16, 5);
            let mut exact: HashMap<u64, u64> = HashMap::new();
            for k in &keys {
                s.touch(&[*k]);
                *exact.entry(*k).or_default() += 1;
            }
            for (k, n) in exact {
                prop_assert!(s.query(&[k]) >= n);
            }
        }

        #[test]
        fn map_matches_reference(ops in proptest::collection::vec((0u64..8, 0u64..100), 0..64)) {
            let mut m = MapState::new(5, false);
            let mut reference: HashMap<u64, u64> = HashMap::new();
            for (k, v) in ops {
                let ok = m.put(vec![k], v);
                let expect = reference.contains_key(&k) || reference.len() < 5;
                prop_assert_eq!(ok, expect);
                if expect {
                    reference.insert(k, v);
                }
            }
            for k in 0..8 {
                prop_assert_eq!(m.get(&[k]), reference.get(&k).copied());
            }
        }
    }
}
