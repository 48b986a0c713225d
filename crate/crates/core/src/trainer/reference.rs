//! Monolithic in-memory trainer: the whole table and every optimizer state
//! live in one place, with no blocks ever evicted. Used as the oracle for the
//! streamed pipeline.

use super::adam::{adam_update_rows, check_finite, group_by_block, AdamConfig};
use super::render::Image;
use super::batch_step;
use super::scene::TOY_DIM;
use crate::error::{Error, Result};
use crate::param_table::{BlockPayload, TableConfig};
use crate::pipeline::AdamState;
use crate::visibility::Camera;

pub struct ReferenceTrainer {
    table: TableConfig,
    blocks: Vec<BlockPayload>,
    opt: Vec<AdamState>,
    adam: AdamConfig,
}

impl ReferenceTrainer {
    /// `rows` is the full table in block order (already permuted).
    pub fn new(table: TableConfig, rows: &[f32], adam: AdamConfig) -> Result<Self> {
        if table.dim() != TOY_DIM || rows.len() as u64 != table.n_primitives() * TOY_DIM as u64 {
            return Err(Error::Shape(format!("{} values for a {}x{} table", rows.len(), table.n_primitives(), table.dim())));
        }
        let blocks: Vec<BlockPayload> = (0..table.k_blocks()).map(|k| BlockPayload::from_table(rows, k, &table)).collect();
        let opt = blocks.iter().map(|b| AdamState::zeroed(b.values.len())).collect();
        Ok(Self {
            table,
            blocks,
            opt,
            adam,
        })
    }

    pub fn blocks(&self) -> &[BlockPayload] {
        &self.blocks
    }

    /// One optimization step over a batch of views; returns the mean loss.
    pub fn step(&mut self, cameras: &[Camera], targets: &[&Image]) -> Result<f64> {
        let per_view = cameras
            .iter()
            .map(|c| super::active_prims(&self.blocks, &self.table, c))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_step(cameras, targets, &per_view)?;
        check_finite(&grads)?;
        for (k, rows) in group_by_block(&grads, &self.table)? {
            adam_update_rows(&mut self.blocks[k as usize].values, &mut self.opt[k as usize], &rows, TOY_DIM, &self.adam);
        }
        Ok(loss)
    }
}
