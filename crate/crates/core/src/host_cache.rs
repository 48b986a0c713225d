//! Host-memory tier: byte-bounded LRU block cache with per-block dirty bits.
//!
//! Dirty entries evicted under pressure become [`FlushJob`]s. Until a job
//! has been appended to the store its payload stays visible through an
//! in-flight table, so a concurrent miss never reads a stale version.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::log_store::Store;
use crate::param_table::{block_payload_bytes, BlockId, BlockPayload};

pub const DEFAULT_CACHE_BYTES: u64 = 1 << 30;

#[derive(Clone, Debug)]
struct CacheEntry {
    payload: BlockPayload,
    dirty: bool,
    lru_stamp: u64,
    /// Sequence number of the write that produced this content.
    seq: u64,
}

/// A dirty block evicted from the cache, waiting to be appended to the store.
#[derive(Clone, Debug)]
pub struct FlushJob {
    pub payload: BlockPayload,
    seq: u64,
}

impl FlushJob {
    pub fn block_id(&self) -> BlockId {
        self.payload.block_id
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub dirty_evictions: u64,
    pub flushed_blocks: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Default)]
struct Inner {
    entries: HashMap<BlockId, CacheEntry>,
    lru: BTreeMap<u64, BlockId>,
    clock: u64,
    next_seq: u64,
    used_bytes: u64,
    in_flight: HashMap<BlockId, (u64, BlockPayload)>,
    /// Highest write sequence already persisted per block.
    persisted_seq: HashMap<BlockId, u64>,
    queue: Vec<FlushJob>,
    stats: CacheStats,
}

impl Inner {
    /// Records that write `seq` of block `k` is durable. An in-flight copy
    /// at or below it is stale from now on.
    fn mark_persisted(&mut self, k: BlockId, seq: u64) {
        let p = self.persisted_seq.entry(k).or_insert(0);
        *p = (*p).max(seq);
        if self.in_flight.get(&k).is_some_and(|(s, _)| *s <= seq) {
            self.in_flight.remove(&k);
        }
    }

    fn touch(&mut self, k: BlockId) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(e) = self.entries.get_mut(&k) {
            self.lru.remove(&e.lru_stamp);
            e.lru_stamp = stamp;
            self.lru.insert(stamp, k);
        }
    }

    fn put(&mut self, payload: BlockPayload, dirty: bool, seq: u64, block_bytes: u64) {
        let k = payload.block_id;
        if let Some(old) = self.entries.remove(&k) {
            self.lru.remove(&old.lru_stamp);
            self.used_bytes -= block_bytes;
        }
        self.clock += 1;
        self.lru.insert(self.clock, k);
        self.entries.insert(
            k,
            CacheEntry {
                payload,
                dirty,
                lru_stamp: self.clock,
                seq,
            },
        );
        self.used_bytes += block_bytes;
    }

    fn evict_until_fits(&mut self, capacity: u64, block_bytes: u64) -> Vec<FlushJob> {
        let mut jobs = Vec::new();
        while self.used_bytes > capacity {
            let Some((&stamp, &k)) = self.lru.iter().next() else {
                break;
            };
            self.lru.remove(&stamp);
            let e = self.entries.remove(&k).expect("lru and entries agree");
            self.used_bytes -= block_bytes;
            self.stats.evictions += 1;
            if e.dirty {
                self.stats.dirty_evictions += 1;
                self.in_flight.insert(k, (e.seq, e.payload.clone()));
                jobs.push(FlushJob {
                    payload: e.payload,
                    seq: e.seq,
                });
            }
        }
        jobs
    }
}

pub struct HostCache {
    store: Arc<Store>,
    capacity_bytes: u64,
    block_bytes: u64,
    inner: Mutex<Inner>,
}

impl HostCache {
    pub fn new(store: Arc<Store>, capacity_bytes: u64) -> Self {
        let block_bytes = block_payload_bytes(store.config());
        Self {
            store,
            capacity_bytes,
            block_bytes,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.lock().unwrap().stats
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn used_bytes(&self) -> u64 {
        self.inner.lock().unwrap().used_bytes
    }

    pub fn contains(&self, k: BlockId) -> bool {
        self.inner.lock().unwrap().entries.contains_key(&k)
    }

    pub fn is_dirty(&self, k: BlockId) -> Option<bool> {
        self.inner.lock().unwrap().entries.get(&k).map(|e| e.dirty)
    }

    /// Block ids from least to most recently used.
    pub fn lru_order(&self) -> Vec<BlockId> {
        self.inner.lock().unwrap().lru.values().copied().collect()
    }

    pub fn pending_flush_jobs(&self) -> usize {
        self.inner.lock().unwrap().queue.len()
    }

    /// Returns block `k`, reading through to the store on a miss. Misses are
    /// inserted clean at the most-recent position, possibly evicting.
    pub fn get(&self, k: BlockId) -> Result<BlockPayload> {
        self.store.config().check_block(k)?;
        {
            let mut g = self.inner.lock().unwrap();
            if g.entries.contains_key(&k) {
                g.stats.hits += 1;
                g.touch(k);
                return Ok(g.entries[&k].payload.clone());
            }
            g.stats.misses += 1;
            if let Some((seq, p)) = g.in_flight.get(&k).cloned() {
                self.insert_locked(&mut g, p.clone(), false, seq);
                return Ok(p);
            }
        }
        loop {
            let fetched = self.store.read_block(k)?;
            let mut g = self.inner.lock().unwrap();
            if let Some(e) = g.entries.get(&k) {
                let p = e.payload.clone();
                g.touch(k);
                return Ok(p);
            }
            if let Some((seq, p)) = g.in_flight.get(&k).cloned() {
                self.insert_locked(&mut g, p.clone(), false, seq);
                return Ok(p);
            }
            // a flush may have landed between the read and the lock
            if self.store.index_entry(k)?.version != fetched.version {
                continue;
            }
            let seq = g.persisted_seq.get(&k).copied().unwrap_or(0);
            self.insert_locked(&mut g, fetched.clone(), false, seq);
            return Ok(fetched);
        }
    }

    fn insert_locked(&self, g: &mut Inner, payload: BlockPayload, dirty: bool, seq: u64) {
        g.put(payload, dirty, seq, self.block_bytes);
        let jobs = g.evict_until_fits(self.capacity_bytes, self.block_bytes);
        g.queue.extend(jobs);
    }

    /// Write-back target for blocks leaving the resident arena. The incoming
    /// copy always supersedes whatever the cache holds for that block.
    pub fn insert_from_arena(&self, payload: BlockPayload, dirty: bool) {
        let mut g = self.inner.lock().unwrap();
        let k = payload.block_id;
        let seq = if dirty {
            g.next_seq += 1;
            g.next_seq
        } else {
            match g.entries.get(&k) {
                // a clean arena copy equals the cached content
                Some(e) if e.dirty => {
                    let (seq, old_dirty) = (e.seq, e.dirty);
                    g.put(payload, old_dirty, seq, self.block_bytes);
                    let jobs = g.evict_until_fits(self.capacity_bytes, self.block_bytes);
                    g.queue.extend(jobs);
                    return;
                }
                Some(e) => e.seq,
                None => g.in_flight.get(&k).map(|(s, _)| *s).unwrap_or(0),
            }
        };
        g.put(payload, dirty, seq, self.block_bytes);
        let jobs = g.evict_until_fits(self.capacity_bytes, self.block_bytes);
        g.queue.extend(jobs);
    }

    /// Evicts least-recently-used entries until the byte budget holds.
    /// Dirty evictees come back as flush jobs (also tracked as in flight);
    /// clean ones are dropped.
    pub fn evict_until_fits(&self) -> Vec<FlushJob> {
        let mut g = self.inner.lock().unwrap();
        g.evict_until_fits(self.capacity_bytes, self.block_bytes)
    }

    /// Drains flush jobs produced by evictions inside `get`/`insert_from_arena`.
    pub fn take_flush_jobs(&self) -> Vec<FlushJob> {
        std::mem::take(&mut self.inner.lock().unwrap().queue)
    }

    /// Appends the jobs to the store as one batch. Runs outside the cache
    /// lock. Jobs superseded by an already persisted newer write are skipped;
    /// on failure the payloads are reinstated as dirty entries.
    pub fn execute_flush(&self, jobs: Vec<FlushJob>) -> Result<()> {
        if jobs.is_empty() {
            return Ok(());
        }
        let live: Vec<FlushJob> = {
            let g = self.inner.lock().unwrap();
            // newest job per block only, so batch order cannot resurrect an
            // older write
            let mut newest: HashMap<BlockId, FlushJob> = HashMap::new();
            for j in jobs {
                if g.persisted_seq.get(&j.block_id()).is_some_and(|&s| s >= j.seq) {
                    continue;
                }
                match newest.get(&j.block_id()) {
                    Some(o) if o.seq >= j.seq => {}
                    _ => {
                        newest.insert(j.block_id(), j);
                    }
                }
            }
            let mut v: Vec<FlushJob> = newest.into_values().collect();
            v.sort_by_key(|j| j.block_id());
            v
        };
        let payloads: Vec<BlockPayload> = live.iter().map(|j| j.payload.clone()).collect();
        let result = self.store.append_patch(&payloads);
        let mut g = self.inner.lock().unwrap();
        match &result {
            Ok(()) => {
                for j in &live {
                    let k = j.block_id();
                    g.stats.flushed_blocks += 1;
                    g.mark_persisted(k, j.seq);
                }
            }
            Err(_) => {
                for j in live {
                    let k = j.block_id();
                    let newest_in_flight = g.in_flight.get(&k).is_some_and(|(s, _)| *s == j.seq);
                    if newest_in_flight {
                        g.in_flight.remove(&k);
                    }
                    match g.entries.get_mut(&k) {
                        Some(e) if e.seq == j.seq => e.dirty = true,
                        Some(_) => {}
                        None if newest_in_flight => {
                            self.insert_locked(&mut g, j.payload, true, j.seq);
                        }
                        None => {}
                    }
                }
            }
        }
        result
    }

    /// Drains and executes queued flush jobs.
    pub fn flush_pending(&self) -> Result<()> {
        let jobs = self.take_flush_jobs();
        self.execute_flush(jobs)
    }

    /// Consistency barrier: persists queued jobs, then every dirty entry in
    /// one batch (ascending block id), leaving the entries cached and clean.
    pub fn flush_all(&self) -> Result<()> {
        self.flush_pending()?;
        let batch: Vec<(u64, BlockPayload)> = {
            let g = self.inner.lock().unwrap();
            let mut v: Vec<_> = g
                .entries
                .values()
                .filter(|e| e.dirty)
                .map(|e| (e.seq, e.payload.clone()))
                .collect();
            v.sort_by_key(|(_, p)| p.block_id);
            v
        };
        if batch.is_empty() {
            return Ok(());
        }
        let payloads: Vec<BlockPayload> = batch.iter().map(|(_, p)| p.clone()).collect();
        self.store.append_patch(&payloads)?;
        let mut g = self.inner.lock().unwrap();
        for (seq, p) in batch {
            let k = p.block_id;
            g.stats.flushed_blocks += 1;
            g.mark_persisted(k, seq);
            let version = self.store.index_entry(k)?.version;
            if let Some(e) = g.entries.get_mut(&k) {
                if e.seq == seq {
                    e.dirty = false;
                    e.payload.version = version;
                }
            }
        }
        Ok(())
    }
}
