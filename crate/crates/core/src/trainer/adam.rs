//! Masked Adam over resident blocks. Only rows of active primitives are
//! touched; each block keeps its own step counter for bias correction, so a
//! re-admitted block starts over at step 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scene::TOY_DIM;
use crate::error::{Error, Result};
use crate::param_table::{owner_block, BlockId, TableConfig};
use crate::pipeline::{AdamState, ResidentArena};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients keyed by global primitive index (the active set I_t).
pub type SparseGrad = BTreeMap<u64, [f64; TOY_DIM]>;

pub(crate) fn check_finite(grads: &SparseGrad) -> Result<()> {
    for (&i, g) in grads {
        if let Some(a) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                primitive: i as usize,
                attribute: a,
            });
        }
    }
    Ok(())
}

/// One Adam step for a single block: advances the block step counter, then
/// updates every coordinate of the listed rows. Shared by the streamed and
/// in-memory trainers so both produce identical bits.
pub fn adam_update_rows(
    values: &mut [f32],
    state: &mut AdamState,
    rows: &[(usize, [f64; TOY_DIM])],
    dim: usize,
    cfg: &AdamConfig,
) {
    if rows.is_empty() {
        return;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (r, g) in rows {
        for (a, &ga) in g.iter().enumerate().take(dim) {
            let j = r * dim + a;
            let m = cfg.beta1 * state.m[j] as f64 + (1.0 - cfg.beta1) * ga;
            let v = cfg.beta2 * state.v[j] as f64 + (1.0 - cfg.beta2) * ga * ga;
            state.m[j] = m as f32;
            state.v[j] = v as f32;
            let step = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            values[j] = (values[j] as f64 - step) as f32;
        }
    }
}

/// Groups sparse gradients by owner block as (row within block, gradient).
pub fn group_by_block(grads: &SparseGrad, table: &TableConfig) -> Result<BTreeMap<BlockId, Vec<(usize, [f64; TOY_DIM])>>> {
    let mut out: BTreeMap<BlockId, Vec<(usize, [f64; TOY_DIM])>> = BTreeMap::new();
    for (&i, g) in grads {
        let k = owner_block(i, table)?;
        let r = (i - table.first_row(k)) as usize;
        out.entry(k).or_default().push((r, *g));
    }
    Ok(out)
}

/// Applies the masked update to resident blocks. Returns the blocks that
/// were modified (and are now dirty). Nothing changes on error.
pub fn masked_adam_step(
    arena: &mut ResidentArena,
    grads: &SparseGrad,
    table: &TableConfig,
    cfg: &AdamConfig,
) -> Result<BTreeSet<BlockId>> {
    check_finite(grads)?;
    let grouped = group_by_block(grads, table)?;
    for &k in grouped.keys() {
        if !arena.contains(k) {
            return Err(Error::InvalidConfig(format!("gradient for non-resident block {k}")));
        }
    }
    let dim = table.dim();
    for (&k, rows) in &grouped {
        arena.note_update(k);
        let b = arena.get_mut(k).expect("checked resident");
        adam_update_rows(&mut b.payload.values, &mut b.opt, rows, dim, cfg);
        b.dirty = true;
    }
    Ok(grouped.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_table::BlockPayload;

    fn setup() -> (TableConfig, ResidentArena) {
        let cfg = TableConfig::new(8, TOY_DIM, 4).unwrap();
        let mut arena = ResidentArena::new(2, 2);
        for k in 0..2 {
            let mut p = BlockPayload::zeroed(k, &cfg);
            for (j, x) in p.values.iter_mut().enumerate() {
                *x = j as f32 * 0.01;
            }
            arena.admit(p).unwrap();
        }
        (cfg, arena)
    }

    #[test]
    fn empty_active_set_changes_nothing() {
        let (cfg, mut arena) = setup();
        let before: Vec<_> = arena.payloads().cloned().collect();
        let dirty = masked_adam_step(&mut arena, &SparseGrad::new(), &cfg, &AdamConfig::default()).unwrap();
        assert!(dirty.is_empty());
        let after: Vec<_> = arena.payloads().cloned().collect();
        assert_eq!(before, after);
        assert!(arena.dirty_ids().is_empty());
    }

    #[test]
    fn only_active_rows_change() {
        let (cfg, mut arena) = setup();
        let before: Vec<_> = arena.payloads().cloned().collect();
        let mut g = SparseGrad::new();
        g.insert(5, [1.0; TOY_DIM]);
        let dirty = masked_adam_step(&mut arena, &g, &cfg, &AdamConfig::default()).unwrap();
        assert_eq!(dirty, BTreeSet::from([1]));
        assert_eq!(arena.get(0).unwrap().payload, before[0]);
        let b1 = &arena.get(1).unwrap().payload;
        for r in 0..4 {
            let changed = b1.row(r, TOY_DIM) != before[1].row(r, TOY_DIM);
            assert_eq!(changed, r == 1);
        }
    }

    #[test]
    fn matches_scalar_adam_reference() {
        let cfg = AdamConfig::default();
        let mut values = vec![0.5f32; TOY_DIM];
        let mut state = AdamState::zeroed(TOY_DIM);
        let g = 0.3;
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.5f64);
        for t in 1..=50 {
            adam_update_rows(&mut values, &mut state, &[(0, [g; TOY_DIM])], TOY_DIM, &cfg);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            assert!((values[0] as f64 - x).abs() < 1e-5, "step {t}");
        }
        // constant gradient: every bias-corrected step moves by lr
        assert!(x.abs() < 1e-4);
    }

    #[test]
    fn non_finite_gradient_names_the_coordinate() {
        let (cfg, mut arena) = setup();
        let before: Vec<_> = arena.payloads().cloned().collect();
        let mut g = SparseGrad::new();
        g.insert(1, [0.0; TOY_DIM]);
        let mut bad = [0.0; TOY_DIM];
        bad[4] = f64::NAN;
        g.insert(6, bad);
        let err = masked_adam_step(&mut arena, &g, &cfg, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { primitive: 6, attribute: 4 }));
        let after: Vec<_> = arena.payloads().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn readmitted_block_restarts_at_step_one() {
        let (cfg, mut arena) = setup();
        let mut g = SparseGrad::new();
        g.insert(0, [0.1; TOY_DIM]);
        for _ in 0..3 {
            masked_adam_step(&mut arena, &g, &cfg, &AdamConfig::default()).unwrap();
        }
        assert_eq!(arena.optimizer_state(0).unwrap().step, 3);
        let (p, _) = arena.remove(0).unwrap();
        arena.admit(p).unwrap();
        let st = arena.optimizer_state(0).unwrap();
        assert!(st.is_fresh());
        masked_adam_step(&mut arena, &g, &cfg, &AdamConfig::default()).unwrap();
        assert_eq!(arena.optimizer_state(0).unwrap().step, 1);
        assert_eq!(arena.churn().cold_restart_updates, 1);
    }
}
