//! Logical parameter table and the fixed block grid shared by every tier.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BlockId = u32;

/// Attributes per primitive in the full 3D layout (position, scale, rotation,
/// opacity and degree-3 SH color).
pub const FULL_DIM: usize = 59;
pub const DEFAULT_BLOCK_SIZE: usize = 4096;
pub const PAGE_SIZE: usize = 4096;

/// Shape of the logical N x D table and its partition into blocks of B rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableConfig {
    n_primitives: u64,
    dim: usize,
    block_size: usize,
}

impl TableConfig {
    pub fn new(n_primitives: u64, dim: usize, block_size: usize) -> Result<Self> {
        if n_primitives == 0 {
            return Err(Error::InvalidConfig("table needs at least one primitive".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if block_size == 0 {
            return Err(Error::InvalidConfig("block size must be >= 1".into()));
        }
        let k = n_primitives.div_ceil(block_size as u64);
        if k > u32::MAX as u64 {
            return Err(Error::InvalidConfig(format!("{k} blocks exceed the 32-bit block id space")));
        }
        Ok(Self {
            n_primitives,
            dim,
            block_size,
        })
    }

    pub fn n_primitives(&self) -> u64 {
        self.n_primitives
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// K = ceil(N / B).
    pub fn k_blocks(&self) -> u32 {
        self.n_primitives.div_ceil(self.block_size as u64) as u32
    }

    /// Logical rows held by block `k`; only the last block can be short.
    pub fn rows_in_block(&self, k: BlockId) -> usize {
        let start = k as u64 * self.block_size as u64;
        (self.n_primitives.saturating_sub(start)).min(self.block_size as u64) as usize
    }

    /// First primitive index owned by block `k`.
    pub fn first_row(&self, k: BlockId) -> u64 {
        k as u64 * self.block_size as u64
    }

    pub fn floats_per_block(&self) -> usize {
        self.block_size * self.dim
    }

    pub fn check_block(&self, k: BlockId) -> Result<()> {
        if k < self.k_blocks() {
            Ok(())
        } else {
            Err(Error::BlockOutOfRange {
                block: k,
                k: self.k_blocks(),
            })
        }
    }
}

/// Block that owns primitive `i`: floor(i / B). Ownership never changes.
pub fn owner_block(i: u64, cfg: &TableConfig) -> Result<BlockId> {
    if i >= cfg.n_primitives {
        return Err(Error::PrimitiveOutOfRange {
            index: i,
            n: cfg.n_primitives,
        });
    }
    Ok((i / cfg.block_size as u64) as BlockId)
}

/// Physical record size of one block: B * D * 4 bytes (fp32, padded).
pub fn block_payload_bytes(cfg: &TableConfig) -> u64 {
    cfg.block_size as u64 * cfg.dim as u64 * 4
}

/// One materialized block: B x D fp32 values, rows past N zero-filled.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPayload {
    pub block_id: BlockId,
    pub values: Vec<f32>,
    pub version: u64,
}

impl BlockPayload {
    pub fn zeroed(block_id: BlockId, cfg: &TableConfig) -> Self {
        Self {
            block_id,
            values: vec![0.0; cfg.floats_per_block()],
            version: 0,
        }
    }

    /// Copies block `k`'s rows out of a dense row-major table, padding the tail.
    pub fn from_table(table: &[f32], k: BlockId, cfg: &TableConfig) -> Self {
        let mut payload = Self::zeroed(k, cfg);
        let start = cfg.first_row(k) as usize * cfg.dim;
        let len = cfg.rows_in_block(k) * cfg.dim;
        payload.values[..len].copy_from_slice(&table[start..start + len]);
        payload
    }

    pub fn row(&self, r: usize, dim: usize) -> &[f32] {
        &self.values[r * dim..(r + 1) * dim]
    }

    pub fn row_mut(&mut self, r: usize, dim: usize) -> &mut [f32] {
        &mut self.values[r * dim..(r + 1) * dim]
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn values_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

/// Active primitive set, block working set and resident set for one iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActiveSets {
    pub gaussian_active: BTreeSet<u64>,
    pub block_working: BTreeSet<BlockId>,
    pub resident: BTreeSet<BlockId>,
}

impl ActiveSets {
    /// Every active primitive's owner block must be both visible and resident,
    /// and the resident set must fit the capacity.
    pub fn is_consistent(&self, cfg: &TableConfig, capacity: usize) -> bool {
        self.resident.len() <= capacity
            && self.gaussian_active.iter().all(|&i| {
                owner_block(i, cfg)
                    .map(|k| self.resident.contains(&k) && self.block_working.contains(&k))
                    .unwrap_or(false)
            })
    }
}
