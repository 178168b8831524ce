//! The streaming tick loop: quality-probabilistic insertion, retention
//! policies, and interest-driven re-indexing.
//!
//! Each tick processes the items arriving at that tick. Every item is
//! inserted into each of the `L` tables independently with probability equal
//! to its quality, interest events re-index items with probability
//! `quality * u`, and finally the retention policy eliminates entries.
//! Entries inserted or refreshed within the current tick are exempt from
//! that tick's elimination scan, so a surviving entry has seen exactly
//! `age` scans.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynapop::{InterestEvent, PopularityLedger};
use crate::lsh::{Table, TableEntry, TableSet};
use crate::seeds::derive_seed;
use crate::vector::SparseVector;
use crate::{Error, Result};

/// A stream element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub tick: u64,
    pub vector: SparseVector,
    pub quality: f64,
}

impl Item {
    /// Age in ticks at time `now`; the arrival tick itself counts as age 0.
    pub fn age_at(&self, now: u64) -> Result<u64> {
        now.checked_sub(self.tick).ok_or_else(|| {
            Error::Protocol(format!(
                "item {} arrives at tick {} which is after now={now}",
                self.id, self.tick
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.quality.is_finite() || !(0.0..=1.0).contains(&self.quality) {
            return Err(Error::Domain(format!(
                "item {}: quality {} outside [0,1]",
                self.id, self.quality
            )));
        }
        if self.vector.is_zero() {
            return Err(Error::ZeroNorm("item vector"));
        }
        Ok(())
    }
}

/// Which entries survive each tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetentionPolicy {
    /// Cap each table at `t_size` entries, dropping the oldest.
    Threshold { t_size: usize },
    /// Cap each bucket at `b_size` entries, dropping the oldest per bucket.
    Bucket { b_size: usize },
    /// Remove a uniform `1-p` fraction of each table per tick.
    Smooth { p: f64 },
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RetentionPolicy::Threshold { t_size } if t_size < 1 => {
                Err(Error::InvalidConfig("t_size must be at least 1".into()))
            }
            RetentionPolicy::Bucket { b_size } if b_size < 1 => {
                Err(Error::InvalidConfig("b_size must be at least 1".into()))
            }
            RetentionPolicy::Smooth { p } if !(p > 0.0 && p < 1.0) => Err(Error::InvalidConfig(
                format!("retention factor p must lie strictly in (0,1), got {p}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RetentionPolicy::Threshold { .. } => "threshold",
            RetentionPolicy::Bucket { .. } => "bucket",
            RetentionPolicy::Smooth { .. } => "smooth",
        }
    }
}

/// Interest-driven re-indexing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynaPopConfig {
    /// Insertion factor: an interest event re-indexes into each table with
    /// probability `quality * u`.
    pub u: f64,
    /// Exponential interest decay for popularity scores.
    pub alpha: f64,
    /// How many fully evicted items keep their metadata around so later
    /// interest can revive them; events on items beyond this are dropped.
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
}

fn default_cache_capacity() -> usize {
    8192
}

impl DynaPopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.u <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "insertion factor u must lie in (0,1], got {}",
                self.u
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "interest decay alpha must lie strictly in (0,1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Full index configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamIndexConfig {
    pub k: u32,
    pub l: usize,
    pub policy: RetentionPolicy,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynapop: Option<DynaPopConfig>,
}

impl StreamIndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 64 {
            return Err(Error::InvalidConfig(format!("k must be in 1..=64, got {}", self.k)));
        }
        if self.l == 0 {
            return Err(Error::InvalidConfig("L must be at least 1".into()));
        }
        self.policy.validate()?;
        if let Some(dp) = &self.dynapop {
            dp.validate()?;
        }
        Ok(())
    }
}

/// Per-tick accounting, one record per processed tick.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TickStats {
    pub tick: u64,
    pub table_sizes: Vec<usize>,
    /// Entries added by quality-probabilistic insertion.
    pub inserts: u64,
    /// Entries added or refreshed by interest re-indexing.
    pub reinserts: u64,
    /// Entries removed by the retention policy.
    pub evictions: u64,
    /// Interest events whose item could no longer be resolved.
    pub dropped_events: u64,
}

/// Item metadata shared by all tables; an item stays here while at least one
/// table entry references it.
struct Stored {
    item: Item,
    refs: u32,
}

/// Bounded FIFO cache of recently evicted items so interest events can still
/// re-hash their vectors.
struct EvictedCache {
    capacity: usize,
    map: HashMap<String, (Item, u64)>,
    order: VecDeque<(String, u64)>,
    stamp: u64,
}

impl EvictedCache {
    fn new(capacity: usize) -> Self {
        Self { capacity, map: HashMap::new(), order: VecDeque::new(), stamp: 0 }
    }

    fn push(&mut self, item: Item) {
        if self.capacity == 0 {
            return;
        }
        self.stamp += 1;
        self.order.push_back((item.id.clone(), self.stamp));
        self.map.insert(item.id.clone(), (item, self.stamp));
        while self.map.len() > self.capacity {
            // skip stale queue entries left behind by re-pushes
            let (id, stamp) = self.order.pop_front().expect("cache queue drained early");
            if self.map.get(&id).is_some_and(|&(_, s)| s == stamp) {
                self.map.remove(&id);
            }
        }
    }

    fn take(&mut self, id: &str) -> Option<Item> {
        self.map.remove(id).map(|(item, _)| item)
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut Item> {
        self.map.get_mut(id).map(|(item, _)| item)
    }
}

struct ItemStore {
    slots: Vec<Option<Stored>>,
    free: Vec<u32>,
    by_id: HashMap<String, u32>,
    cache: EvictedCache,
    /// Every id ever admitted; duplicate arrivals are a protocol error.
    seen: HashSet<String>,
}

impl ItemStore {
    fn new(cache_capacity: usize) -> Self {
        Self {
            slots: Vec::new(),
            free: Vec::new(),
            by_id: HashMap::new(),
            cache: EvictedCache::new(cache_capacity),
            seen: HashSet::new(),
        }
    }

    fn admit(&mut self, item: Item) -> u32 {
        let slot = match self.free.pop() {
            Some(s) => {
                self.slots[s as usize] = Some(Stored { item: item.clone(), refs: 0 });
                s
            }
            None => {
                self.slots.push(Some(Stored { item: item.clone(), refs: 0 }));
                (self.slots.len() - 1) as u32
            }
        };
        self.by_id.insert(item.id, slot);
        slot
    }

    fn get(&self, slot: u32) -> &Stored {
        self.slots[slot as usize].as_ref().expect("dangling item slot")
    }

    fn get_mut(&mut self, slot: u32) -> &mut Stored {
        self.slots[slot as usize].as_mut().expect("dangling item slot")
    }

    fn slot_of(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    fn incref(&mut self, slot: u32) {
        self.get_mut(slot).refs += 1;
    }

    /// Decrements and, once unreferenced, moves the item to the evicted
    /// cache (or drops it).
    fn decref(&mut self, slot: u32) {
        let stored = self.get_mut(slot);
        stored.refs -= 1;
        if stored.refs == 0 {
            self.release(slot);
        }
    }

    /// Removes a zero-ref slot, caching its metadata.
    fn release(&mut self, slot: u32) {
        let stored = self.slots[slot as usize].take().expect("dangling item slot");
        debug_assert_eq!(stored.refs, 0);
        self.by_id.remove(&stored.item.id);
        self.free.push(slot);
        self.cache.push(stored.item);
    }
}

/// The streaming index: `L` bucketed tables plus shared item metadata,
/// advanced one tick at a time by a single writer.
pub struct StreamIndex {
    config: StreamIndexConfig,
    tables: TableSet,
    store: ItemStore,
    ledger: PopularityLedger,
    /// Next tick to process == number of ticks processed so far.
    next_tick: u64,
    seq: u64,
    coin_seed: u64,
    dropped_events_total: u64,
}

impl StreamIndex {
    pub fn new(config: StreamIndexConfig) -> Result<Self> {
        config.validate()?;
        let tables = TableSet::new(config.k, config.l, derive_seed(config.seed, "sketch", &[]))?;
        let cache_capacity = config.dynapop.map_or(0, |dp| dp.cache_capacity);
        let alpha = config.dynapop.map_or(0.5, |dp| dp.alpha);
        Ok(Self {
            coin_seed: derive_seed(config.seed, "coins", &[]),
            tables,
            store: ItemStore::new(cache_capacity),
            ledger: PopularityLedger::new(alpha)?,
            next_tick: 0,
            seq: 0,
            config,
            dropped_events_total: 0,
        })
    }

    pub fn config(&self) -> &StreamIndexConfig {
        &self.config
    }

    /// Number of ticks processed; also the tick the next call must carry.
    pub fn ticks_processed(&self) -> u64 {
        self.next_tick
    }

    /// The most recently processed tick, if any. Queries and ages are
    /// usually evaluated at this time.
    pub fn last_tick(&self) -> Option<u64> {
        self.next_tick.checked_sub(1)
    }

    pub fn total_entries(&self) -> usize {
        self.tables.total_entries()
    }

    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.table_sizes()
    }

    /// Number of tables currently holding a copy of the item.
    pub fn copies_of(&self, id: &str) -> usize {
        match self.store.slot_of(id) {
            Some(slot) => (0..self.config.l).filter(|&t| self.tables.contains(t, slot)).count(),
            None => 0,
        }
    }

    /// Metadata for a currently indexed item.
    pub fn item(&self, id: &str) -> Option<&Item> {
        self.store.slot_of(id).map(|slot| &self.store.get(slot).item)
    }

    /// Ids of all currently indexed items, sorted.
    pub fn item_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.store.by_id.keys().cloned().collect();
        ids.sort_unstable();
        ids
    }

    pub fn popularity(&self) -> &PopularityLedger {
        &self.ledger
    }

    pub fn dropped_events(&self) -> u64 {
        self.dropped_events_total
    }

    /// Union of the query's buckets across all tables, as item ids.
    pub fn lookup(&self, q: &SparseVector) -> Result<HashSet<String>> {
        let slots = self.tables.lookup(q)?;
        Ok(slots
            .into_iter()
            .map(|s| self.store.get(s).item.id.clone())
            .collect())
    }

    /// Processes one tick: validates the batch, runs quality-probabilistic
    /// insertion, applies interest events, then eliminates per policy.
    pub fn tick(&mut self, items: Vec<Item>, interest: &[InterestEvent]) -> Result<TickStats> {
        let now = self.next_tick;
        self.validate_batch(&items, interest)?;

        let l = self.config.l;
        let mut insert_rngs = self.phase_rngs("insert", now);
        let mut inserts = 0u64;
        for item in items {
            let quality = item.quality;
            let slot = self.store.admit(item);
            for t in 0..l {
                if insert_rngs[t].gen_bool(quality) {
                    let vector = &self.store.get(slot).item.vector;
                    let sketch = self.tables.sketch(t, vector)?;
                    let entry = TableEntry { item: slot, tick: now, seq: self.seq, refreshed: now, sketch };
                    self.seq += 1;
                    if self.tables.insert(t, entry) {
                        self.store.incref(slot);
                        inserts += 1;
                    }
                }
            }
            if self.store.get(slot).refs == 0 {
                self.store.release(slot);
            }
        }

        let mut reinserts = 0u64;
        let mut dropped = 0u64;
        if self.config.dynapop.is_some() {
            let mut reindex_rngs = self.phase_rngs("reindex", now);
            for ev in interest {
                let (added, was_dropped) = self.apply_interest(ev, now, &mut reindex_rngs)?;
                reinserts += added;
                dropped += u64::from(was_dropped);
            }
        }
        self.dropped_events_total += dropped;

        let mut evictions = 0u64;
        for t in 0..l {
            let removed = match self.config.policy {
                RetentionPolicy::Threshold { t_size } => {
                    eliminate_threshold(self.tables.table_mut(t), t_size)
                }
                RetentionPolicy::Bucket { b_size } => {
                    eliminate_bucket(self.tables.table_mut(t), b_size)
                }
                RetentionPolicy::Smooth { p } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        self.coin_seed,
                        "eliminate",
                        &[t as u64, now],
                    ));
                    eliminate_smooth(self.tables.table_mut(t), p, now, &mut rng)
                }
            };
            evictions += removed.len() as u64;
            for e in removed {
                self.store.decref(e.item);
            }
        }

        self.next_tick += 1;
        Ok(TickStats {
            tick: now,
            table_sizes: self.tables.table_sizes(),
            inserts,
            reinserts,
            evictions,
            dropped_events: dropped,
        })
    }

    fn validate_batch(&mut self, items: &[Item], interest: &[InterestEvent]) -> Result<()> {
        let now = self.next_tick;
        let mut batch_ids = HashSet::new();
        for item in items {
            if item.tick != now {
                return Err(Error::Protocol(format!(
                    "item {} carries tick {}, current tick is {now}",
                    item.id, item.tick
                )));
            }
            item.validate()?;
            if self.store.seen.contains(&item.id) || !batch_ids.insert(item.id.as_str()) {
                return Err(Error::Protocol(format!("duplicate item id {}", item.id)));
            }
        }
        for ev in interest {
            if ev.tick != now {
                return Err(Error::Protocol(format!(
                    "interest event for {} carries tick {}, current tick is {now}",
                    ev.id, ev.tick
                )));
            }
            if let Some(q) = ev.quality {
                if !q.is_finite() || !(0.0..=1.0).contains(&q) {
                    return Err(Error::Domain(format!(
                        "interest event for {}: quality {q} outside [0,1]",
                        ev.id
                    )));
                }
            }
            if self.config.dynapop.is_none() {
                return Err(Error::Protocol(
                    "interest events supplied but dynapop is not configured".into(),
                ));
            }
        }
        for item in items {
            self.store.seen.insert(item.id.clone());
        }
        Ok(())
    }

    /// Records the event in the popularity ledger and re-indexes the item
    /// into each table with probability `quality * u`. A successful coin on
    /// an already-present entry refreshes it (exempting it from the current
    /// tick's scan) without touching bucket contents. Returns (entries added
    /// or refreshed, dropped?).
    fn apply_interest(
        &mut self,
        ev: &InterestEvent,
        now: u64,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<(u64, bool)> {
        let u = self.config.dynapop.as_ref().expect("dynapop checked").u;
        self.ledger.record(&ev.id, now)?;

        // quality may change dynamically; the current value governs the coins
        if let Some(q) = ev.quality {
            if let Some(slot) = self.store.slot_of(&ev.id) {
                self.store.get_mut(slot).item.quality = q;
            } else if let Some(item) = self.store.cache.get_mut(&ev.id) {
                item.quality = q;
            }
        }

        if let Some(slot) = self.store.slot_of(&ev.id) {
            let quality = self.store.get(slot).item.quality;
            let mut touched = 0u64;
            for t in 0..self.config.l {
                if !rngs[t].gen_bool(quality * u) {
                    continue;
                }
                touched += 1;
                if self.tables.refresh(t, slot, now) {
                    continue;
                }
                let item = &self.store.get(slot).item;
                let sketch = self.tables.sketch(t, &item.vector)?;
                let entry =
                    TableEntry { item: slot, tick: item.tick, seq: self.seq, refreshed: now, sketch };
                self.seq += 1;
                if self.tables.insert(t, entry) {
                    self.store.incref(slot);
                }
            }
            return Ok((touched, false));
        }

        // Fully evicted: draw the coins first so the random stream does not
        // depend on cache state, then revive on any success.
        let Some(quality) = self.store.cache.get_mut(&ev.id).map(|i| i.quality) else {
            return Ok((0, true));
        };
        let mut mask = vec![false; self.config.l];
        let mut any = false;
        for t in 0..self.config.l {
            mask[t] = rngs[t].gen_bool(quality * u);
            any |= mask[t];
        }
        if !any {
            return Ok((0, false));
        }
        let item = self.store.cache.take(&ev.id).expect("cached item vanished");
        let arrival = item.tick;
        let slot = self.store.admit(item);
        let mut touched = 0u64;
        for t in 0..self.config.l {
            if !mask[t] {
                continue;
            }
            let vector = &self.store.get(slot).item.vector;
            let sketch = self.tables.sketch(t, vector)?;
            let entry = TableEntry { item: slot, tick: arrival, seq: self.seq, refreshed: now, sketch };
            self.seq += 1;
            if self.tables.insert(t, entry) {
                self.store.incref(slot);
                touched += 1;
            }
        }
        debug_assert!(self.store.get(slot).refs > 0);
        Ok((touched, false))
    }

    fn phase_rngs(&self, label: &str, now: u64) -> Vec<ChaCha8Rng> {
        (0..self.config.l)
            .map(|t| {
                ChaCha8Rng::seed_from_u64(derive_seed(self.coin_seed, label, &[t as u64, now]))
            })
            .collect()
    }

    pub(crate) fn tables(&self) -> &TableSet {
        &self.tables
    }

    pub(crate) fn restore(
        config: StreamIndexConfig,
        next_tick: u64,
        seq: u64,
        dropped_events_total: u64,
    ) -> Result<Self> {
        let mut index = Self::new(config)?;
        index.next_tick = next_tick;
        index.seq = seq;
        index.dropped_events_total = dropped_events_total;
        Ok(index)
    }

    pub(crate) fn restore_item(&mut self, item: Item) -> u32 {
        self.store.seen.insert(item.id.clone());
        self.store.admit(item)
    }

    pub(crate) fn restore_entry(&mut self, table: usize, entry: TableEntry) -> Result<()> {
        let vector = &self.store.get(entry.item).item.vector;
        let expected = self.tables.sketch(table, vector)?;
        if expected != entry.sketch {
            return Err(Error::Invariant(format!(
                "entry for item {} in table {table} carries sketch {:?} but hashes to {:?}",
                self.store.get(entry.item).item.id,
                entry.sketch,
                expected
            )));
        }
        if !self.tables.insert(table, entry) {
            return Err(Error::Invariant("duplicate entry in snapshot".into()));
        }
        self.store.incref(entry.item);
        Ok(())
    }

    pub(crate) fn restore_ledger(&mut self, ledger: PopularityLedger) {
        self.ledger = ledger;
    }

    pub(crate) fn drop_unreferenced(&mut self) {
        let unreferenced: Vec<u32> = self
            .store
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Some(st) if st.refs == 0 => Some(i as u32),
                _ => None,
            })
            .collect();
        for slot in unreferenced {
            self.store.release(slot);
        }
    }
}

/// Caps the table at `t_size`, evicting the oldest entries by
/// (arrival tick, insertion sequence).
pub(crate) fn eliminate_threshold(table: &mut Table, t_size: usize) -> Vec<TableEntry> {
    let mut out = Vec::new();
    while table.len() > t_size {
        let item = table.oldest().expect("non-empty table has an oldest entry");
        out.push(table.remove(item).expect("oldest entry present"));
    }
    out
}

/// Caps every bucket at `b_size`, evicting the oldest entries per bucket.
/// Only buckets touched since the last scan can exceed the cap.
pub(crate) fn eliminate_bucket(table: &mut Table, b_size: usize) -> Vec<TableEntry> {
    let dirty = std::mem::take(&mut table.dirty);
    let mut out = Vec::new();
    for sketch in dirty {
        let members = table.bucket(crate::lsh::Sketch(sketch));
        if members.len() <= b_size {
            continue;
        }
        let mut keyed: Vec<(u64, u64, u32)> = members
            .iter()
            .map(|&item| {
                let e = table.entry(item).expect("bucket member has an entry");
                (e.tick, e.seq, item)
            })
            .collect();
        keyed.sort_unstable();
        let excess = keyed.len() - b_size;
        for &(_, _, item) in &keyed[..excess] {
            out.push(table.remove(item).expect("bucket member present"));
        }
    }
    out
}

/// Removes a uniform `1-p` fraction of the table's eligible entries
/// (those not inserted or refreshed at `now`). The removal count is
/// `floor((1-p)*n)` plus one more with probability equal to the fractional
/// part, so each entry survives a tick with probability exactly `p`.
pub(crate) fn eliminate_smooth(
    table: &mut Table,
    p: f64,
    now: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<TableEntry> {
    let mut eligible: Vec<u32> = table
        .entries()
        .iter()
        .filter(|e| e.refreshed < now)
        .map(|e| e.item)
        .collect();
    let target = (1.0 - p) * eligible.len() as f64;
    let mut m = target.floor() as usize;
    if rng.gen_bool(target.fract()) {
        m += 1;
    }
    if m == 0 {
        return Vec::new();
    }
    // partial Fisher-Yates: the first m slots become a uniform sample
    for i in 0..m {
        let j = rng.gen_range(i..eligible.len());
        eligible.swap(i, j);
    }
    eligible
        .into_iter()
        .take(m)
        .map(|item| table.remove(item).expect("sampled entry present"))
        .collect()
}

/// Drives a full stream through a fresh index: items and interest events
/// sorted by tick, ticks without arrivals included. Returns the index after
/// the last populated tick.
pub fn replay(
    config: &StreamIndexConfig,
    items: &[Item],
    interest: &[InterestEvent],
    mut on_tick: impl FnMut(&TickStats),
) -> Result<StreamIndex> {
    let mut index = StreamIndex::new(config.clone())?;
    let last = items
        .iter()
        .map(|i| i.tick)
        .chain(interest.iter().map(|e| e.tick))
        .max();
    let Some(last) = last else {
        return Ok(index);
    };
    let (mut ii, mut ei) = (0usize, 0usize);
    for t in 0..=last {
        let istart = ii;
        while ii < items.len() && items[ii].tick == t {
            ii += 1;
        }
        if ii < items.len() && items[ii].tick < t {
            return Err(Error::Protocol("item stream is not sorted by tick".into()));
        }
        let estart = ei;
        while ei < interest.len() && interest[ei].tick == t {
            ei += 1;
        }
        if ei < interest.len() && interest[ei].tick < t {
            return Err(Error::Protocol("interest stream is not sorted by tick".into()));
        }
        let stats = index.tick(items[istart..ii].to_vec(), &interest[estart..ei])?;
        on_tick(&stats);
    }
    Ok(index)
}
