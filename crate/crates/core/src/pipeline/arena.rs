//! Capacity-bounded resident tier with per-block optimizer state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_table::{BlockId, BlockPayload};

/// Adam moments for one block plus its local step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u32,
}

impl AdamState {
    pub fn zeroed(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn is_fresh(&self) -> bool {
        self.step == 0 && self.m.iter().chain(&self.v).all(|&x| x == 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct ResidentBlock {
    pub payload: BlockPayload,
    pub dirty: bool,
    pub opt: AdamState,
    admitted_at: u64,
    readmitted: bool,
}

impl ResidentBlock {
    pub fn admitted_at(&self) -> u64 {
        self.admitted_at
    }

    pub fn is_readmission(&self) -> bool {
        self.readmitted
    }
}

/// Residency and optimizer-state churn, accumulated over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnCounters {
    pub admissions: u64,
    pub evictions: u64,
    pub readmissions: u64,
    /// Block updates applied to a block (one per block per step).
    pub total_updates: u64,
    /// Updates applied under a freshly re-initialized state after re-admission.
    pub cold_restart_updates: u64,
    /// Sum over iterations of the number of materialized blocks.
    pub resident_block_iterations: u64,
}

impl ChurnCounters {
    pub fn delta(&self, earlier: &ChurnCounters) -> ChurnCounters {
        ChurnCounters {
            admissions: self.admissions - earlier.admissions,
            evictions: self.evictions - earlier.evictions,
            readmissions: self.readmissions - earlier.readmissions,
            total_updates: self.total_updates - earlier.total_updates,
            cold_restart_updates: self.cold_restart_updates - earlier.cold_restart_updates,
            resident_block_iterations: self.resident_block_iterations - earlier.resident_block_iterations,
        }
    }
}

/// Raw residency events, recorded only when enabled; lets callers audit the
/// churn counters independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArenaEvent {
    Admit { block: BlockId, iteration: u64 },
    Evict { block: BlockId, iteration: u64 },
    Update { block: BlockId, iteration: u64 },
}

pub struct ResidentArena {
    capacity: usize,
    blocks: BTreeMap<BlockId, ResidentBlock>,
    ever_admitted: Vec<bool>,
    churn: ChurnCounters,
    events: Option<Vec<ArenaEvent>>,
    iteration: u64,
}

impl ResidentArena {
    pub fn new(capacity: usize, k_blocks: u32) -> Self {
        Self {
            capacity,
            blocks: BTreeMap::new(),
            ever_admitted: vec![false; k_blocks as usize],
            churn: ChurnCounters::default(),
            events: None,
            iteration: 0,
        }
    }

    pub fn record_events(&mut self, on: bool) {
        self.events = if on { Some(Vec::new()) } else { None };
    }

    pub fn events(&self) -> &[ArenaEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn set_iteration(&mut self, t: u64) {
        self.iteration = t;
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, k: BlockId) -> bool {
        self.blocks.contains_key(&k)
    }

    pub fn ids(&self) -> BTreeSet<BlockId> {
        self.blocks.keys().copied().collect()
    }

    pub fn churn(&self) -> ChurnCounters {
        self.churn
    }

    pub fn get(&self, k: BlockId) -> Option<&ResidentBlock> {
        self.blocks.get(&k)
    }

    pub fn get_mut(&mut self, k: BlockId) -> Option<&mut ResidentBlock> {
        self.blocks.get_mut(&k)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ResidentBlock> {
        self.blocks.values()
    }

    pub fn payloads(&self) -> impl Iterator<Item = &BlockPayload> {
        self.blocks.values().map(|b| &b.payload)
    }

    pub fn optimizer_state(&self, k: BlockId) -> Option<&AdamState> {
        self.blocks.get(&k).map(|b| &b.opt)
    }

    /// Materializes a staged block with a fresh optimizer state.
    pub fn admit(&mut self, payload: BlockPayload) -> Result<()> {
        let k = payload.block_id;
        if self.blocks.contains_key(&k) {
            return Err(Error::InvalidConfig(format!("block {k} is already resident")));
        }
        if self.blocks.len() >= self.capacity {
            return Err(Error::WorkingSetExceedsCapacity {
                needed: self.blocks.len() + 1,
                capacity: self.capacity,
            });
        }
        let seen = self
            .ever_admitted
            .get_mut(k as usize)
            .ok_or(Error::BlockOutOfRange { block: k, k: 0 })?;
        let readmitted = *seen;
        *seen = true;
        self.churn.admissions += 1;
        if readmitted {
            self.churn.readmissions += 1;
        }
        if let Some(ev) = &mut self.events {
            ev.push(ArenaEvent::Admit {
                block: k,
                iteration: self.iteration,
            });
        }
        let len = payload.values.len();
        self.blocks.insert(
            k,
            ResidentBlock {
                payload,
                dirty: false,
                opt: AdamState::zeroed(len),
                admitted_at: self.iteration,
                readmitted,
            },
        );
        Ok(())
    }

    /// Removes a block and destroys its optimizer state. Returns the payload
    /// and its dirty flag.
    pub fn remove(&mut self, k: BlockId) -> Option<(BlockPayload, bool)> {
        let b = self.blocks.remove(&k)?;
        self.churn.evictions += 1;
        if let Some(ev) = &mut self.events {
            ev.push(ArenaEvent::Evict {
                block: k,
                iteration: self.iteration,
            });
        }
        Some((b.payload, b.dirty))
    }

    /// Bookkeeping for one optimizer step on block `k`; call before the
    /// step counter is advanced.
    pub(crate) fn note_update(&mut self, k: BlockId) {
        let Some(b) = self.blocks.get(&k) else {
            return;
        };
        self.churn.total_updates += 1;
        if b.readmitted && b.opt.step == 0 {
            self.churn.cold_restart_updates += 1;
        }
        if let Some(ev) = &mut self.events {
            ev.push(ArenaEvent::Update {
                block: k,
                iteration: self.iteration,
            });
        }
    }

    pub(crate) fn tick_residency(&mut self) {
        self.churn.resident_block_iterations += self.blocks.len() as u64;
    }

    pub fn dirty_ids(&self) -> Vec<BlockId> {
        self.blocks.iter().filter(|(_, b)| b.dirty).map(|(&k, _)| k).collect()
    }
}
