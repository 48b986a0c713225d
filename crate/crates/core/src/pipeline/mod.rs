//! Four-stage out-of-core loop: identify visible blocks, prefetch and stage
//! the next resident delta, compute on the resident set, evict and write
//! back. Staging for t+1 and flushing of earlier evictions run on worker
//! threads while iteration t computes.

mod arena;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use arena::{AdamState, ArenaEvent, ChurnCounters, ResidentArena, ResidentBlock};

use crate::blocking::{refresh_bound, BlockBound};
use crate::error::{Error, Result};
use crate::host_cache::{FlushJob, HostCache};
use crate::log_store::Store;
use crate::param_table::{block_payload_bytes, BlockId, BlockPayload, TableConfig};
use crate::tide_scheduler::{select_residency, RecencyTable, SchedulerConfig, StreamPlan};
use crate::visibility::{visible_blocks, Camera, PrimitiveGeometry, VisibleSets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Arena capacity C in blocks.
    pub arena_blocks: usize,
    pub cache_bytes: u64,
    pub scheduler: SchedulerConfig,
    /// Overlap staging and flushing with compute.
    pub overlap: bool,
    /// Differential streaming. When off, every visible block is re-sent
    /// each iteration even if already resident.
    pub tide: bool,
    /// Artificial delay per staged block, emulating the host-to-device copy.
    #[serde(with = "duration_micros")]
    pub transfer_latency: Duration,
    pub record_events: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            arena_blocks: 64,
            cache_bytes: crate::host_cache::DEFAULT_CACHE_BYTES,
            scheduler: SchedulerConfig::default(),
            overlap: true,
            tide: true,
            transfer_latency: Duration::ZERO,
            record_events: false,
        }
    }
}

pub(crate) mod duration_micros {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

/// Per-iteration measurements. Byte counts are exact; times are wall clock.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: u64,
    pub stage_in_bytes: u64,
    pub evict_bytes: u64,
    pub ssd_read_bytes: u64,
    pub ssd_write_bytes: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub readmissions: u64,
    pub cold_restart_updates: u64,
    pub total_updates: u64,
    pub wait_ms: f64,
    pub compute_ms: f64,
    pub wall_ms: f64,
    pub loss: f64,
    #[serde(skip)]
    pub stage_ms: f64,
    #[serde(skip)]
    pub flush_ms: f64,
    #[serde(skip)]
    pub resident_blocks: usize,
    #[serde(skip)]
    pub staged_blocks: usize,
}

/// What the compute stage sees for one iteration.
pub struct ComputeContext<'a> {
    pub iteration: u64,
    pub batch: &'a [usize],
    pub cameras: &'a [Camera],
    /// K_t, computed with current bounds.
    pub visible: &'a VisibleSets,
    pub arena: &'a mut ResidentArena,
    pub table: &'a TableConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComputeOutcome {
    pub loss: f64,
    /// Blocks whose parameters changed (already marked dirty in the arena).
    pub updated_blocks: BTreeSet<BlockId>,
    /// Active set I_t, ascending.
    pub active: Vec<u64>,
}

/// Forward/backward pass and masked update over the resident blocks.
pub trait ComputeStage {
    fn geometry(&self) -> &dyn PrimitiveGeometry;
    fn compute(&mut self, ctx: ComputeContext<'_>) -> Result<ComputeOutcome>;
}

/// Hands a resident block to the host cache and drops its optimizer state.
pub fn evict_block(arena: &mut ResidentArena, cache: &HostCache, k: BlockId) -> Result<()> {
    let (payload, dirty) = arena
        .remove(k)
        .ok_or_else(|| Error::InvalidConfig(format!("block {k} is not resident")))?;
    cache.insert_from_arena(payload, dirty);
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub iteration: u64,
    pub seed: u64,
    pub table: TableConfig,
    pub pipeline: PipelineConfig,
    pub index_versions: Vec<u64>,
}

struct Prefetched {
    plan: StreamPlan,
    next_visible: VisibleSets,
    staged: Vec<BlockPayload>,
    stage_time: Duration,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    table: TableConfig,
    store: Arc<Store>,
    cache: Arc<HostCache>,
    arena: ResidentArena,
    recency: RecencyTable,
    bounds: Vec<BlockBound>,
    cameras: Vec<Camera>,
    pending_flush: Vec<FlushJob>,
    iteration: u64,
}

impl Pipeline {
    pub fn new(store: Arc<Store>, bounds: Vec<BlockBound>, cameras: Vec<Camera>, cfg: PipelineConfig) -> Result<Self> {
        cfg.scheduler.validate()?;
        let table = *store.config();
        if cfg.arena_blocks == 0 {
            return Err(Error::InvalidConfig("arena capacity must be >= 1 block".into()));
        }
        if bounds.len() != table.k_blocks() as usize {
            return Err(Error::Shape(format!(
                "{} bounds for {} blocks",
                bounds.len(),
                table.k_blocks()
            )));
        }
        let cache = Arc::new(HostCache::new(store.clone(), cfg.cache_bytes));
        let mut arena = ResidentArena::new(cfg.arena_blocks, table.k_blocks());
        arena.record_events(cfg.record_events);
        Ok(Self {
            recency: RecencyTable::new(table.k_blocks(), cfg.scheduler.gamma),
            cfg,
            table,
            store,
            cache,
            arena,
            bounds,
            cameras,
            pending_flush: Vec::new(),
            iteration: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn table(&self) -> &TableConfig {
        &self.table
    }

    pub fn arena(&self) -> &ResidentArena {
        &self.arena
    }

    pub fn arena_mut(&mut self) -> &mut ResidentArena {
        &mut self.arena
    }

    pub fn cache(&self) -> &Arc<HostCache> {
        &self.cache
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn bounds(&self) -> &[BlockBound] {
        &self.bounds
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn batch_cameras(&self, batch: &[usize]) -> Result<Vec<Camera>> {
        batch
            .iter()
            .map(|&v| {
                self.cameras
                    .get(v)
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("view {v} out of range")))
            })
            .collect()
    }

    fn stage_one(cache: &HostCache, k: BlockId, latency: Duration) -> Result<BlockPayload> {
        let p = cache.get(k)?;
        if !latency.is_zero() {
            thread::sleep(latency);
        }
        Ok(p)
    }

    /// Synchronously materializes blocks (cold start and late top-ups).
    fn stage_now(&mut self, blocks: &BTreeSet<BlockId>) -> Result<usize> {
        let mut staged = Vec::with_capacity(blocks.len());
        for &k in blocks {
            staged.push(Self::stage_one(&self.cache, k, self.cfg.transfer_latency).map_err(|e| Error::Staging(Box::new(e)))?);
        }
        let n = staged.len();
        for p in staged {
            self.arena.admit(p)?;
        }
        Ok(n)
    }

    fn check_tide_off_capacity(&self, visible: &VisibleSets) -> Result<()> {
        if !self.cfg.tide && visible.union.len() > self.cfg.arena_blocks {
            return Err(Error::WorkingSetExceedsCapacity {
                needed: visible.union.len(),
                capacity: self.cfg.arena_blocks,
            });
        }
        Ok(())
    }

    /// Runs iteration t on `batch`, staging the resident set for `next`.
    pub fn run_iteration(
        &mut self,
        batch: &[usize],
        next: Option<&[usize]>,
        compute: &mut dyn ComputeStage,
    ) -> Result<IterationStats> {
        let wall_start = Instant::now();
        let t = self.iteration;
        self.arena.set_iteration(t);
        let store0 = self.store.stats();
        let cache0 = self.cache.stats();
        let churn0 = self.arena.churn();
        let bb = block_payload_bytes(&self.table);
        let mut stats = IterationStats {
            iter: t,
            ..Default::default()
        };

        // Stage 1: identify K_t with the current (possibly grown) bounds.
        let cams_t = self.batch_cameras(batch)?;
        let visible = visible_blocks(&cams_t, &self.bounds)?;
        self.check_tide_off_capacity(&visible)?;
        let missing = visible.union.difference(&self.arena.ids()).next().is_some();
        if missing {
            // cold start, or bounds grew since the plan was made: bring K_t
            // in synchronously before compute
            let plan = select_residency(
                &visible.per_camera,
                &self.arena.ids(),
                self.cfg.arena_blocks,
                &self.recency,
                &self.cfg.scheduler,
            )?;
            for &k in &plan.evict {
                evict_block(&mut self.arena, &self.cache, k)?;
            }
            stats.evict_bytes += plan.evict.len() as u64 * bb;
            let n = self.stage_now(&plan.stage_in)?;
            stats.stage_in_bytes += n as u64 * bb;
            stats.staged_blocks += n;
        }

        let accessed: BTreeSet<BlockId> = visible.union.intersection(&self.arena.ids()).copied().collect();
        self.recency.update(&accessed);
        self.arena.tick_residency();
        stats.resident_blocks = self.arena.len();

        let cams_next = match next {
            Some(n) => Some(self.batch_cameras(n)?),
            None => None,
        };
        let jobs = std::mem::take(&mut self.pending_flush);

        // Stages 2-4.
        let (prefetched, flushed, outcome, compute_time) = {
            let Self {
                cfg,
                cache,
                arena,
                recency,
                bounds,
                table,
                ..
            } = self;
            let current = arena.ids();
            // staging time runs from issue, so worker scheduling delay counts
            let issued = Instant::now();
            let prefetch = || -> Result<Option<Prefetched>> {
                let Some(cams) = cams_next.as_ref() else {
                    return Ok(None);
                };
                let next_visible = visible_blocks(cams, bounds)?;
                let plan = select_residency(&next_visible.per_camera, &current, cfg.arena_blocks, recency, &cfg.scheduler)?;
                let mut staged = Vec::with_capacity(plan.stage_in.len());
                for &k in &plan.stage_in {
                    staged.push(Self::stage_one(cache, k, cfg.transfer_latency)?);
                }
                Ok(Some(Prefetched {
                    plan,
                    next_visible,
                    staged,
                    stage_time: issued.elapsed(),
                }))
            };
            // failed jobs are reinstated as dirty cache entries
            let flush = || -> (Result<()>, Duration) {
                let start = Instant::now();
                let r = cache.execute_flush(jobs);
                (r, start.elapsed())
            };
            let ctx = ComputeContext {
                iteration: t,
                batch,
                cameras: &cams_t,
                visible: &visible,
                arena,
                table,
            };
            if cfg.overlap {
                thread::scope(|s| {
                    let pf = s.spawn(prefetch);
                    let fl = s.spawn(flush);
                    let start = Instant::now();
                    let out = compute.compute(ctx);
                    let ct = start.elapsed();
                    let pf = pf.join().expect("prefetch worker panicked");
                    let fl = fl.join().expect("flush worker panicked");
                    (pf, fl, out, ct)
                })
            } else {
                let pf = prefetch();
                let start = Instant::now();
                let out = compute.compute(ctx);
                let ct = start.elapsed();
                let fl = flush();
                (pf, fl, out, ct)
            }
        };
        stats.compute_ms = compute_time.as_secs_f64() * 1e3;
        let (flush_result, flush_time) = flushed;
        stats.flush_ms = flush_time.as_secs_f64() * 1e3;

        let outcome = outcome?;
        stats.loss = outcome.loss;
        self.refresh_bounds(&outcome.updated_blocks, compute.geometry());
        flush_result?;

        // Boundary: evict S^-, commit the staging buffer.
        let prefetched = prefetched.map_err(|e| Error::Staging(Box::new(e)))?;
        if let Some(pf) = prefetched {
            self.check_tide_off_capacity(&pf.next_visible)?;
            stats.stage_ms = pf.stage_time.as_secs_f64() * 1e3;
            for &k in &pf.plan.evict {
                evict_block(&mut self.arena, &self.cache, k)?;
            }
            stats.evict_bytes += pf.plan.evict.len() as u64 * bb;
            if !self.cfg.tide {
                // re-send every visible block that stayed resident
                let resend: Vec<BlockId> = pf.next_visible.union.intersection(&pf.plan.keep).copied().collect();
                let start = Instant::now();
                for k in resend {
                    let blk = self.arena.get_mut(k).expect("kept block is resident");
                    self.cache.insert_from_arena(blk.payload.clone(), blk.dirty);
                    blk.dirty = false;
                    let fresh = Self::stage_one(&self.cache, k, self.cfg.transfer_latency)?;
                    self.arena.get_mut(k).expect("resident").payload = fresh;
                    stats.stage_in_bytes += bb;
                    stats.staged_blocks += 1;
                }
                stats.stage_ms += start.elapsed().as_secs_f64() * 1e3;
            }
            stats.stage_in_bytes += pf.staged.len() as u64 * bb;
            stats.staged_blocks += pf.staged.len();
            for p in pf.staged {
                self.arena.admit(p)?;
            }
        }
        self.pending_flush.extend(self.cache.take_flush_jobs());

        let store1 = self.store.stats();
        let cache1 = self.cache.stats();
        let churn = self.arena.churn().delta(&churn0);
        stats.ssd_read_bytes = store1.bytes_read - store0.bytes_read;
        stats.ssd_write_bytes = store1.bytes_written - store0.bytes_written;
        stats.cache_hits = cache1.hits - cache0.hits;
        stats.cache_misses = cache1.misses - cache0.misses;
        stats.evictions = churn.evictions;
        stats.readmissions = churn.readmissions;
        stats.cold_restart_updates = churn.cold_restart_updates;
        stats.total_updates = churn.total_updates;
        stats.wall_ms = wall_start.elapsed().as_secs_f64() * 1e3;
        stats.wait_ms = (stats.wall_ms - stats.compute_ms).max(0.0);
        self.iteration += 1;
        Ok(stats)
    }

    fn refresh_bounds(&mut self, updated: &BTreeSet<BlockId>, geometry: &dyn PrimitiveGeometry) {
        let dim = self.table.dim();
        for &k in updated {
            let Some(b) = self.arena.get(k) else { continue };
            let rows = self.table.rows_in_block(k);
            let (centers, extents): (Vec<_>, Vec<_>) = (0..rows).map(|r| geometry.sphere(b.payload.row(r, dim))).unzip();
            self.bounds[k as usize] = refresh_bound(&self.bounds[k as usize], &centers, &extents);
        }
    }

    /// Consistency barrier: writes every dirty resident block back through
    /// the host cache, flushes all pending and dirty cache state to the
    /// store, and writes a manifest next to it.
    pub fn checkpoint(&mut self, manifest_path: &Path, seed: u64) -> Result<CheckpointManifest> {
        for k in self.arena.dirty_ids() {
            let b = self.arena.get_mut(k).expect("dirty id is resident");
            b.dirty = false;
            self.cache.insert_from_arena(b.payload.clone(), true);
        }
        let mut jobs = std::mem::take(&mut self.pending_flush);
        jobs.extend(self.cache.take_flush_jobs());
        self.cache.execute_flush(jobs)?;
        self.cache.flush_all()?;
        let manifest = CheckpointManifest {
            iteration: self.iteration,
            seed,
            table: self.table,
            pipeline: self.cfg.clone(),
            index_versions: self.store.index_snapshot().iter().map(|e| e.version).collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
        Ok(manifest)
    }

    /// Newest logical value of every block: arena copy if resident, otherwise
    /// whatever the host tier serves.
    pub fn logical_table(&self) -> Result<Vec<BlockPayload>> {
        (0..self.table.k_blocks())
            .map(|k| match self.arena.get(k) {
                Some(b) => Ok(b.payload.clone()),
                None => self.cache.get(k),
            })
            .collect()
    }
}
