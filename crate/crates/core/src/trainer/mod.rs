//! Desk-scale 2D splatting trainer: renderer, masked Adam, view ordering and
//! the compute stage plugged into the streaming pipeline.

pub mod adam;
pub mod ordering;
pub mod reference;
pub mod render;
pub mod scene;

use std::collections::{BTreeMap, BTreeSet};

pub use adam::{adam_update_rows, masked_adam_step, AdamConfig, SparseGrad};
pub use ordering::{gradient_variation, order_views, OrderMode, ViewOrder};
pub use reference::ReferenceTrainer;
pub use render::{loss_and_grads, psnr, render, Image, Prim};
pub use scene::{ToyGeometry, ToyPrimitive, TOY_DIM};

use crate::error::{Error, Result};
use crate::param_table::{BlockId, BlockPayload, TableConfig};
use crate::pipeline::{ComputeContext, ComputeOutcome, ComputeStage, IterationStats, Pipeline};
use crate::visibility::{fine_filter, frustum_from_camera, Camera, PrimitiveGeometry};

pub(crate) type Prims = Vec<Prim>;

/// Mean loss over the batch and the batch-averaged gradient of every active
/// primitive (zero rows included). Views are accumulated in batch order.
pub fn batch_step(cameras: &[Camera], targets: &[&Image], per_view: &[Prims]) -> Result<(f64, SparseGrad)> {
    if cameras.len() != targets.len() || cameras.len() != per_view.len() {
        return Err(Error::Shape(format!(
            "{} cameras, {} targets, {} active sets",
            cameras.len(),
            targets.len(),
            per_view.len()
        )));
    }
    let j = cameras.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = SparseGrad::new();
    for ((cam, target), prims) in cameras.iter().zip(targets).zip(per_view) {
        let (l, g) = loss_and_grads(cam, target, prims)?;
        loss += l / j;
        for ((i, _), gi) in prims.iter().zip(g) {
            let acc = grads.entry(*i).or_insert([0.0; TOY_DIM]);
            for (a, x) in acc.iter_mut().zip(gi) {
                *a += x / j;
            }
        }
    }
    Ok((loss, grads))
}

/// Primitives of `blocks` whose footprint meets the camera frustum, in
/// ascending global index.
pub fn active_prims(blocks: &[BlockPayload], table: &TableConfig, camera: &Camera) -> Result<Prims> {
    let f = frustum_from_camera(camera)?;
    let all: BTreeSet<BlockId> = blocks.iter().map(|b| b.block_id).collect();
    let idx = fine_filter(blocks, &all, &f, table, &ToyGeometry);
    let by_id: BTreeMap<BlockId, &BlockPayload> = blocks.iter().map(|b| (b.block_id, b)).collect();
    Ok(gather(&idx, table, |k| by_id.get(&k).copied()))
}

fn gather<'a>(idx: &[u64], table: &TableConfig, block: impl Fn(BlockId) -> Option<&'a BlockPayload>) -> Prims {
    let b = table.block_size() as u64;
    idx.iter()
        .map(|&i| {
            let k = (i / b) as BlockId;
            let p = block(k).expect("filtered primitive lives in a given block");
            (i, scene::row_to_f64(p.row((i % b) as usize, table.dim())))
        })
        .collect()
}

/// Gradient of one view's loss at the given parameters.
pub fn view_gradient(blocks: &[BlockPayload], table: &TableConfig, camera: &Camera, target: &Image) -> Result<SparseGrad> {
    let prims = active_prims(blocks, table, camera)?;
    Ok(batch_step(std::slice::from_ref(camera), &[target], &[prims])?.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    /// Mean of per-view PSNR.
    pub psnr: f64,
}

pub fn evaluate(blocks: &[BlockPayload], table: &TableConfig, cameras: &[Camera], targets: &[Image]) -> Result<Evaluation> {
    if cameras.is_empty() || cameras.len() != targets.len() {
        return Err(Error::Shape(format!("{} cameras, {} targets", cameras.len(), targets.len())));
    }
    let (mut mse, mut db) = (0.0, 0.0);
    for (c, t) in cameras.iter().zip(targets) {
        let img = render(c, &active_prims(blocks, table, c)?)?.image;
        let e = img.mse(t)?;
        mse += e;
        db += psnr(e);
    }
    let m = cameras.len() as f64;
    Ok(Evaluation {
        mse: mse / m,
        psnr: db / m,
    })
}

/// Per-iteration view batches: one pass over the views per epoch, shuffle
/// mode reseeded each epoch, batches taken consecutively from the stream.
pub fn view_schedule(cameras: &[Camera], mode: OrderMode, seed: u64, batch_size: usize, iterations: usize) -> Vec<Vec<usize>> {
    let positions: Vec<_> = cameras.iter().map(Camera::position).collect();
    let batch_size = batch_size.max(1);
    let mut stream = Vec::with_capacity(iterations * batch_size);
    let mut epoch = 0u64;
    while stream.len() < iterations * batch_size && !cameras.is_empty() {
        stream.extend(order_views(&positions, mode, seed.wrapping_add(epoch)).perm);
        epoch += 1;
    }
    stream.truncate(iterations * batch_size);
    stream.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Compute stage for the toy splatting model.
pub struct ToyCompute {
    targets: Vec<Image>,
    adam: AdamConfig,
    /// Active set of the last iteration, for inspection.
    pub last_active: Vec<u64>,
}

impl ToyCompute {
    pub fn new(targets: Vec<Image>, adam: AdamConfig) -> Self {
        Self {
            targets,
            adam,
            last_active: Vec::new(),
        }
    }

    pub fn targets(&self) -> &[Image] {
        &self.targets
    }
}

impl ComputeStage for ToyCompute {
    fn geometry(&self) -> &dyn PrimitiveGeometry {
        &ToyGeometry
    }

    fn compute(&mut self, ctx: ComputeContext<'_>) -> Result<ComputeOutcome> {
        if ctx.table.dim() != TOY_DIM {
            return Err(Error::Shape(format!("toy trainer needs D = {TOY_DIM}, table has {}", ctx.table.dim())));
        }
        let mut per_view = Vec::with_capacity(ctx.cameras.len());
        let mut targets = Vec::with_capacity(ctx.cameras.len());
        for (j, cam) in ctx.cameras.iter().enumerate() {
            let view = ctx.batch[j];
            targets.push(
                self.targets
                    .get(view)
                    .ok_or_else(|| Error::InvalidConfig(format!("no target for view {view}")))?,
            );
            let f = frustum_from_camera(cam)?;
            let idx = fine_filter(ctx.arena.payloads(), &ctx.visible.per_camera[j], &f, ctx.table, &ToyGeometry);
            let arena = &*ctx.arena;
            per_view.push(gather(&idx, ctx.table, |k| arena.get(k).map(|b| &b.payload)));
        }
        let (loss, grads) = batch_step(ctx.cameras, &targets, &per_view)?;
        let updated = masked_adam_step(ctx.arena, &grads, ctx.table, &self.adam)?;
        self.last_active = grads.keys().copied().collect();
        Ok(ComputeOutcome {
            loss,
            updated_blocks: updated,
            active: self.last_active.clone(),
        })
    }
}

/// Drives the pipeline over a precomputed schedule.
pub fn run_schedule(
    pipeline: &mut Pipeline,
    compute: &mut dyn ComputeStage,
    schedule: &[Vec<usize>],
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<Vec<IterationStats>> {
    let mut out = Vec::with_capacity(schedule.len());
    for t in 0..schedule.len() {
        let s = pipeline.run_iteration(&schedule[t], schedule.get(t + 1).map(Vec::as_slice), compute)?;
        on_iteration(&s);
        out.push(s);
    }
    Ok(out)
}
