//! Random-hyperplane hashing and the bucketed table structure.
//!
//! A single-bit hash is the sign of the dot product with a random Gaussian
//! direction, so two vectors collide with probability equal to their angular
//! similarity. A sketch concatenates `k` such bits; the index replicates
//! items across `L` tables, each with its own sketch function.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::seeds::{derive_seed, mix64};
use crate::vector::SparseVector;
use crate::{Error, Result};

/// One random hyperplane, `h(v) = sign(r . v)` with `r` standard normal.
///
/// Coordinates of `r` are realized lazily per dimension index from the seed,
/// so sparse vectors never materialize a full `d`-length direction, and the
/// same (seed, dimension) always yields the same coordinate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HyperplaneHash {
    seed: u64,
}

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

impl HyperplaneHash {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Standard-normal coordinate for one dimension, via counter-based
    /// mixing and a Box-Muller transform.
    #[inline]
    pub fn coordinate(&self, dim: u32) -> f64 {
        let x = mix64(self.seed ^ u64::from(dim).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let y = mix64(x ^ 0x6a09_e667_f3bc_c909);
        let u1 = ((x >> 11) as f64 + 1.0) / TWO_POW_53; // (0, 1]
        let u2 = (y >> 11) as f64 / TWO_POW_53; // [0, 1)
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Hash bit for `v`; sign(0) counts as positive.
    pub fn hash(&self, v: &SparseVector) -> Result<bool> {
        if v.is_zero() {
            return Err(Error::ZeroNorm("hash input"));
        }
        let dot: f64 = v.entries().iter().map(|&(d, w)| w * self.coordinate(d)).sum();
        Ok(dot >= 0.0)
    }
}

/// A `k`-bit sketch; bit `i` comes from the `i`-th component hyperplane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sketch(pub u64);

/// Concatenation of `k` independently seeded hyperplane hashes.
#[derive(Clone, Debug)]
pub struct SketchFunction {
    bits: Vec<HyperplaneHash>,
}

impl SketchFunction {
    pub fn new(seed: u64, k: u32) -> Self {
        let bits = (0..k)
            .map(|j| HyperplaneHash::new(derive_seed(seed, "bit", &[u64::from(j)])))
            .collect();
        Self { bits }
    }

    pub fn k(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn sketch(&self, v: &SparseVector) -> Result<Sketch> {
        let mut out = 0u64;
        for (j, h) in self.bits.iter().enumerate() {
            if h.hash(v)? {
                out |= 1 << j;
            }
        }
        Ok(Sketch(out))
    }
}

/// A bucket entry. `tick` is the item's arrival tick (its age), `seq` breaks
/// ties among same-tick entries, and `refreshed` is the last tick at which
/// the entry was inserted or re-indexed — entries refreshed in the current
/// tick are exempt from that tick's retention scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableEntry {
    pub item: u32,
    pub tick: u64,
    pub seq: u64,
    pub refreshed: u64,
    pub sketch: Sketch,
}

/// One hash table: sketch-keyed buckets of entries, at most one entry per
/// item. Buckets exist only while non-empty.
#[derive(Default)]
pub(crate) struct Table {
    /// Dense slab of live entries in arbitrary order (supports uniform
    /// sampling); `pos` maps an item to its slab index.
    entries: Vec<TableEntry>,
    pos: HashMap<u32, usize>,
    buckets: HashMap<u64, Vec<u32>>,
    /// (arrival tick, seq, item) — oldest first.
    by_age: BTreeSet<(u64, u64, u32)>,
    /// Buckets touched since the last bucket-cap scan.
    pub(crate) dirty: BTreeSet<u64>,
}

impl Table {
    pub(crate) fn len(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn contains(&self, item: u32) -> bool {
        self.pos.contains_key(&item)
    }

    pub(crate) fn entry(&self, item: u32) -> Option<&TableEntry> {
        self.pos.get(&item).map(|&i| &self.entries[i])
    }

    pub(crate) fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub(crate) fn bucket(&self, sketch: Sketch) -> &[u32] {
        self.buckets.get(&sketch.0).map_or(&[], |b| b.as_slice())
    }

    pub(crate) fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Inserts if absent; returns false (leaving the entry untouched) when
    /// the item already occupies its bucket.
    pub(crate) fn insert(&mut self, e: TableEntry) -> bool {
        if self.pos.contains_key(&e.item) {
            return false;
        }
        self.pos.insert(e.item, self.entries.len());
        self.by_age.insert((e.tick, e.seq, e.item));
        self.buckets.entry(e.sketch.0).or_default().push(e.item);
        self.dirty.insert(e.sketch.0);
        self.entries.push(e);
        true
    }

    /// Marks an existing entry as refreshed at `now`.
    pub(crate) fn refresh(&mut self, item: u32, now: u64) -> bool {
        match self.pos.get(&item) {
            Some(&i) => {
                self.entries[i].refreshed = now;
                true
            }
            None => false,
        }
    }

    pub(crate) fn remove(&mut self, item: u32) -> Option<TableEntry> {
        let i = self.pos.remove(&item)?;
        let e = self.entries.swap_remove(i);
        if i < self.entries.len() {
            self.pos.insert(self.entries[i].item, i);
        }
        self.by_age.remove(&(e.tick, e.seq, e.item));
        let bucket = self
            .buckets
            .get_mut(&e.sketch.0)
            .expect("entry without bucket");
        bucket.retain(|&it| it != item);
        if bucket.is_empty() {
            self.buckets.remove(&e.sketch.0);
        }
        Some(e)
    }

    /// Oldest entry by (arrival tick, seq).
    pub(crate) fn oldest(&self) -> Option<u32> {
        self.by_age.first().map(|&(_, _, item)| item)
    }
}

/// `L` tables with their sketch functions.
pub struct TableSet {
    k: u32,
    sketchers: Vec<SketchFunction>,
    tables: Vec<Table>,
}

impl TableSet {
    pub fn new(k: u32, l: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > 64 {
            return Err(Error::InvalidConfig(format!("k must be in 1..=64, got {k}")));
        }
        if l == 0 {
            return Err(Error::InvalidConfig("L must be at least 1".into()));
        }
        let sketchers = (0..l)
            .map(|i| SketchFunction::new(derive_seed(seed, "table", &[i as u64]), k))
            .collect();
        let tables = (0..l).map(|_| Table::default()).collect();
        Ok(Self { k, sketchers, tables })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn sketch(&self, table: usize, v: &SparseVector) -> Result<Sketch> {
        self.sketchers[table].sketch(v)
    }

    /// Inserts an entry into table `i` (no-op when the item is present).
    pub fn insert(&mut self, table: usize, entry: TableEntry) -> bool {
        self.tables[table].insert(entry)
    }

    pub fn contains(&self, table: usize, item: u32) -> bool {
        self.tables[table].contains(item)
    }

    pub fn refresh(&mut self, table: usize, item: u32, now: u64) -> bool {
        self.tables[table].refresh(item, now)
    }

    pub fn table_len(&self, table: usize) -> usize {
        self.tables[table].len()
    }

    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(Table::len).collect()
    }

    /// Sum of bucket sizes over all tables.
    pub fn total_entries(&self) -> usize {
        self.tables.iter().map(Table::len).sum()
    }

    /// Union of the query's buckets across all tables; sorted, deduplicated
    /// item handles.
    pub fn lookup(&self, q: &SparseVector) -> Result<Vec<u32>> {
        if q.is_zero() {
            return Err(Error::ZeroNorm("query"));
        }
        let mut out = Vec::new();
        for (i, table) in self.tables.iter().enumerate() {
            let sketch = self.sketchers[i].sketch(q)?;
            out.extend_from_slice(table.bucket(sketch));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub(crate) fn table(&self, i: usize) -> &Table {
        &self.tables[i]
    }

    pub(crate) fn table_mut(&mut self, i: usize) -> &mut Table {
        &mut self.tables[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::angular_similarity;

    fn v(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(pairs.to_vec()).unwrap()
    }

    /// Unit pair at an exact angular similarity: (1,0) against
    /// (cos theta, sin theta) on two dedicated dimensions.
    fn pair_at_similarity(s: f64) -> (SparseVector, SparseVector) {
        let theta = (1.0 - s) * std::f64::consts::PI;
        let u = v(&[(0, 1.0)]);
        let w = v(&[(0, theta.cos()), (1, theta.sin())]);
        (u, w)
    }

    #[test]
    fn sketch_is_scale_invariant_and_deterministic() {
        let g = SketchFunction::new(99, 12);
        let a = v(&[(3, 0.5), (17, 2.0), (40, 1.25)]);
        let b = v(&[(3, 1.25), (17, 5.0), (40, 3.125)]); // 2.5 * a
        assert_eq!(g.sketch(&a).unwrap(), g.sketch(&b).unwrap());
        assert_eq!(g.sketch(&a).unwrap(), g.sketch(&a).unwrap());
    }

    #[test]
    fn identical_vectors_share_sketches_under_every_function() {
        let a = v(&[(1, 1.0), (2, 2.0)]);
        let b = a.clone();
        for seed in 0..50 {
            let g = SketchFunction::new(seed, 16);
            assert_eq!(g.sketch(&a).unwrap(), g.sketch(&b).unwrap());
        }
    }

    #[test]
    fn zero_vector_cannot_be_sketched() {
        let z = SparseVector::new(vec![]).unwrap();
        let g = SketchFunction::new(1, 4);
        assert!(matches!(g.sketch(&z), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn single_bit_collision_rate_tracks_similarity() {
        // Monte-Carlo over fresh hyperplanes for a pair at similarity 0.75.
        let (u, w) = pair_at_similarity(0.75);
        assert!((angular_similarity(&u, &w).unwrap() - 0.75).abs() < 1e-12);
        let trials = 100_000u32;
        let mut collisions = 0u32;
        for i in 0..trials {
            let h = HyperplaneHash::new(derive_seed(0xc0111de, "mc", &[u64::from(i)]));
            if h.hash(&u).unwrap() == h.hash(&w).unwrap() {
                collisions += 1;
            }
        }
        let rate = f64::from(collisions) / f64::from(trials);
        assert!(
            (rate - 0.75).abs() < 0.01,
            "collision rate {rate} drifted from 0.75"
        );
    }

    #[test]
    fn insert_is_idempotent_and_lookup_finds_items() {
        let mut ts = TableSet::new(8, 5, 7).unwrap();
        let item = v(&[(2, 1.0), (9, 3.0)]);
        for t in 0..ts.num_tables() {
            let sk = ts.sketch(t, &item).unwrap();
            assert!(ts.insert(t, TableEntry { item: 42, tick: 0, seq: t as u64, refreshed: 0, sketch: sk }));
            // re-insert leaves the bucket unchanged
            assert!(!ts.insert(t, TableEntry { item: 42, tick: 0, seq: 99, refreshed: 0, sketch: sk }));
            assert_eq!(ts.table_len(t), 1);
        }
        assert_eq!(ts.total_entries(), 5);
        assert_eq!(ts.lookup(&item).unwrap(), vec![42]);
    }

    #[test]
    fn lookup_on_empty_index_is_empty() {
        let ts = TableSet::new(8, 3, 7).unwrap();
        assert!(ts.lookup(&v(&[(0, 1.0)])).unwrap().is_empty());
    }

    #[test]
    fn total_entries_counts_per_table_copies() {
        let mut ts = TableSet::new(6, 4, 11).unwrap();
        assert_eq!(ts.total_entries(), 0);
        for item in 0..10u32 {
            let vec = v(&[(item, 1.0), (item + 100, 0.5)]);
            for t in 0..4 {
                let sk = ts.sketch(t, &vec).unwrap();
                ts.insert(t, TableEntry { item, tick: 0, seq: u64::from(item), refreshed: 0, sketch: sk });
            }
        }
        assert_eq!(ts.total_entries(), 40);
    }

    #[test]
    fn lookup_probability_matches_collision_model() {
        // One item at similarity 0.9 to the query, present in all L tables:
        // found with probability 1 - (1 - s^k)^L over fresh table sets.
        let (q, x) = pair_at_similarity(0.9);
        let (k, l) = (10u32, 15usize);
        let replicas = 10_000;
        let mut hits = 0u32;
        for r in 0..replicas {
            let mut ts = TableSet::new(k, l, derive_seed(5150, "replica", &[u64::from(r)])).unwrap();
            for t in 0..l {
                let sk = ts.sketch(t, &x).unwrap();
                ts.insert(t, TableEntry { item: 1, tick: 0, seq: 0, refreshed: 0, sketch: sk });
            }
            if !ts.lookup(&q).unwrap().is_empty() {
                hits += 1;
            }
        }
        let rate = f64::from(hits) / f64::from(replicas);
        let expected = 1.0 - (1.0 - 0.9f64.powi(10)).powi(15);
        assert!((expected - 0.99839).abs() < 5e-5);
        assert!(
            (rate - expected).abs() < 0.005,
            "lookup rate {rate}, expected {expected}"
        );
    }

    #[test]
    fn remove_keeps_slab_and_buckets_consistent() {
        let mut table = Table::default();
        for item in 0..20u32 {
            table.insert(TableEntry {
                item,
                tick: u64::from(item / 4),
                seq: u64::from(item),
                refreshed: 0,
                sketch: Sketch(u64::from(item % 3)),
            });
        }
        assert_eq!(table.len(), 20);
        assert_eq!(table.oldest(), Some(0));
        table.remove(0).unwrap();
        table.remove(7).unwrap();
        assert_eq!(table.len(), 18);
        assert_eq!(table.oldest(), Some(1));
        assert!(!table.contains(7));
        // every remaining item resolvable and in its bucket
        for e in table.entries().to_vec() {
            assert!(table.bucket(e.sketch).contains(&e.item));
            assert_eq!(table.entry(e.item).unwrap().seq, e.seq);
        }
    }
}
