//! Residency scoring, camera-balanced Top-C selection and set-difference
//! stream plans.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_table::{block_payload_bytes, BlockId, TableConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Weight of next-step visibility against recency.
    pub lambda: f64,
    /// Recency decay per iteration.
    pub gamma: f64,
    /// Fraction of capacity reserved for per-camera quotas.
    pub beta: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            gamma: 0.9,
            beta: 0.5,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// LRU-style recency in [0, 1]: reset to 1 on access, multiplied by gamma otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct RecencyTable {
    scores: Vec<f64>,
    gamma: f64,
    last_update: u64,
}

impl RecencyTable {
    pub fn new(k_blocks: u32, gamma: f64) -> Self {
        Self {
            scores: vec![0.0; k_blocks as usize],
            gamma,
            last_update: 0,
        }
    }

    pub fn get(&self, k: BlockId) -> f64 {
        self.scores.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn last_update(&self) -> u64 {
        self.last_update
    }

    pub fn update(&mut self, accessed: &BTreeSet<BlockId>) {
        for (k, s) in self.scores.iter_mut().enumerate() {
            if accessed.contains(&(k as BlockId)) {
                *s = 1.0;
            } else {
                *s *= self.gamma;
            }
        }
        self.last_update += 1;
    }
}

pub fn update_recency(table: &mut RecencyTable, accessed: &BTreeSet<BlockId>) {
    table.update(accessed);
}

/// s(k) = lambda * [k in K_{t+1}] + (1 - lambda) * Recency(k).
pub fn score(k: BlockId, next_working: &BTreeSet<BlockId>, recency: &RecencyTable, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda = {lambda} outside [0, 1]")));
    }
    let visible = if next_working.contains(&k) { 1.0 } else { 0.0 };
    Ok(lambda * visible + (1.0 - lambda) * recency.get(k))
}

/// Resident-set transition for one iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamPlan {
    pub keep: BTreeSet<BlockId>,
    pub stage_in: BTreeSet<BlockId>,
    pub evict: BTreeSet<BlockId>,
    pub next_resident: BTreeSet<BlockId>,
}

impl StreamPlan {
    pub fn from_sets(current: &BTreeSet<BlockId>, next: BTreeSet<BlockId>) -> Self {
        Self {
            keep: current.intersection(&next).copied().collect(),
            stage_in: next.difference(current).copied().collect(),
            evict: current.difference(&next).copied().collect(),
            next_resident: next,
        }
    }
}

/// Higher score first, then blocks already resident, then lower id.
fn rank(a: (BlockId, f64, bool), b: (BlockId, f64, bool)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(b.2.cmp(&a.2))
        .then(a.0.cmp(&b.0))
}

/// Camera-balanced Top-C over the pool R_t ∪ K_{t+1}. Each camera j first
/// gets min(|K^(j)|, floor(beta*C/J)) of its own blocks by score; remaining
/// slots go to the whole pool by score.
pub fn select_residency(
    per_camera: &[BTreeSet<BlockId>],
    current: &BTreeSet<BlockId>,
    capacity: usize,
    recency: &RecencyTable,
    cfg: &SchedulerConfig,
) -> Result<StreamPlan> {
    cfg.validate()?;
    if capacity == 0 {
        return Err(Error::InvalidConfig("arena capacity must be >= 1 block".into()));
    }
    let next_working: BTreeSet<BlockId> = per_camera.iter().flatten().copied().collect();
    let pool: BTreeSet<BlockId> = current.union(&next_working).copied().collect();
    if pool.len() <= capacity {
        return Ok(StreamPlan::from_sets(current, pool));
    }

    let keyed = |k: BlockId| -> Result<(BlockId, f64, bool)> {
        Ok((k, score(k, &next_working, recency, cfg.lambda)?, current.contains(&k)))
    };
    let mut selected = BTreeSet::new();
    if !per_camera.is_empty() {
        let quota = (cfg.beta * capacity as f64 / per_camera.len() as f64).floor() as usize;
        for cam in per_camera {
            let q = cam.len().min(quota);
            let have = cam.intersection(&selected).count();
            if have >= q {
                continue;
            }
            let mut cands = cam
                .iter()
                .filter(|k| !selected.contains(*k))
                .map(|&k| keyed(k))
                .collect::<Result<Vec<_>>>()?;
            cands.sort_by(|a, b| rank(*a, *b));
            for (k, _, _) in cands.into_iter().take(q - have) {
                if selected.len() == capacity {
                    break;
                }
                selected.insert(k);
            }
        }
    }
    let mut rest = pool
        .iter()
        .filter(|k| !selected.contains(*k))
        .map(|&k| keyed(k))
        .collect::<Result<Vec<_>>>()?;
    rest.sort_by(|a, b| rank(*a, *b));
    for (k, _, _) in rest {
        if selected.len() >= capacity {
            break;
        }
        selected.insert(k);
    }
    Ok(StreamPlan::from_sets(current, selected))
}

/// (stage-in bytes, evict bytes) for a plan.
pub fn plan_bytes(plan: &StreamPlan, cfg: &TableConfig) -> (u64, u64) {
    let bb = block_payload_bytes(cfg);
    (plan.stage_in.len() as u64 * bb, plan.evict.len() as u64 * bb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[BlockId]) -> BTreeSet<BlockId> {
        v.iter().copied().collect()
    }

    #[test]
    fn recency_examples() {
        let mut t = RecencyTable::new(4, 0.9);
        t.update(&set(&[2]));
        assert_eq!(t.get(2), 1.0);
        t.update(&set(&[]));
        t.update(&set(&[]));
        assert!((t.get(2) - 0.81).abs() < 1e-15);
        t.update(&set(&[]));
        assert!((t.get(2) - 0.729).abs() < 1e-15);
        assert_eq!(t.last_update(), 4);
    }

    #[test]
    fn score_examples() {
        let mut t = RecencyTable::new(4, 0.5);
        let next = set(&[1]);
        assert_eq!(score(1, &next, &t, 1.0).unwrap(), 1.0);
        t.update(&set(&[1]));
        t.update(&set(&[]));
        assert_eq!(score(1, &next, &t, 0.0).unwrap(), 0.5);
        assert!((score(1, &next, &t, 0.7).unwrap() - 0.85).abs() < 1e-12);
        assert!(score(1, &next, &t, 1.5).is_err());
        assert!(score(1, &next, &t, -0.1).is_err());
    }

    #[test]
    fn plan_example_with_spare_capacity() {
        let t = RecencyTable::new(8, 0.9);
        let plan = select_residency(&[set(&[2, 3, 4])], &set(&[1, 2, 3]), 4, &t, &SchedulerConfig::default()).unwrap();
        assert_eq!(plan.keep, set(&[1, 2, 3]));
        assert_eq!(plan.stage_in, set(&[4]));
        assert!(plan.evict.is_empty());
        assert_eq!(plan.next_resident, set(&[1, 2, 3, 4]));
    }

    #[test]
    fn tight_capacity_evicts_the_invisible_block() {
        let t = RecencyTable::new(8, 0.9);
        let plan = select_residency(&[set(&[2, 3, 4])], &set(&[1, 2, 3]), 3, &t, &SchedulerConfig::default()).unwrap();
        assert_eq!(plan.keep, set(&[2, 3]));
        assert_eq!(plan.stage_in, set(&[4]));
        assert_eq!(plan.evict, set(&[1]));
    }

    #[test]
    fn static_view_has_zero_traffic() {
        let t = RecencyTable::new(8, 0.9);
        let r = set(&[0, 3, 5]);
        for c in 3..6 {
            let plan = select_residency(&[r.clone()], &r, c, &t, &SchedulerConfig::default()).unwrap();
            assert!(plan.stage_in.is_empty() && plan.evict.is_empty());
            let cfg = TableConfig::new(100, 9, 4).unwrap();
            assert_eq!(plan_bytes(&plan, &cfg), (0, 0));
        }
    }

    /// Hand enumeration for the quota rule: C=10, J=2, beta=0.5 gives each
    /// camera floor(0.5*10/2) = 2 reserved slots. With uniform scores the
    /// id tie-break picks {0,1} for camera 1 and {10,11} for camera 2, then
    /// the global fill takes 2..=7.
    #[test]
    fn quota_prevents_camera_starvation() {
        let t = RecencyTable::new(32, 0.9);
        let cam1: BTreeSet<BlockId> = (0..10).collect();
        let cam2: BTreeSet<BlockId> = (10..20).collect();
        let plan = select_residency(&[cam1.clone(), cam2.clone()], &BTreeSet::new(), 10, &t, &SchedulerConfig::default())
            .unwrap();
        let expected: BTreeSet<BlockId> = (0..8).chain(10..12).collect();
        assert_eq!(plan.next_resident, expected);
        assert!(plan.next_resident.intersection(&cam2).count() >= 2);
        assert!(plan.next_resident.intersection(&cam1).count() >= 2);

        let global_only = SchedulerConfig {
            beta: 0.0,
            ..Default::default()
        };
        let starved = select_residency(&[cam1, cam2.clone()], &BTreeSet::new(), 10, &t, &global_only).unwrap();
        assert_eq!(starved.next_resident.intersection(&cam2).count(), 0);
    }

    #[test]
    fn plan_bytes_examples() {
        let paper = TableConfig::new(1, 59, 4096).unwrap();
        assert_eq!(plan_bytes(&StreamPlan::default(), &paper), (0, 0));
        let one = StreamPlan::from_sets(&set(&[]), set(&[7]));
        assert_eq!(plan_bytes(&one, &paper), (966_656, 0));
        let toy = TableConfig::new(1, 9, 4096).unwrap();
        let three = StreamPlan::from_sets(&set(&[9]), set(&[1, 2, 3]));
        assert_eq!(plan_bytes(&three, &toy), (442_368, 147_456));
    }

    #[test]
    fn zero_capacity_rejected() {
        let t = RecencyTable::new(4, 0.9);
        assert!(select_residency(&[set(&[1])], &set(&[]), 0, &t, &SchedulerConfig::default()).is_err());
    }

    fn arb_set() -> impl Strategy<Value = BTreeSet<BlockId>> {
        proptest::collection::btree_set(0u32..40, 0..25)
    }

    proptest! {
        #[test]
        fn plan_set_identities(
            cams in proptest::collection::vec(arb_set(), 1..4),
            current in arb_set(),
            capacity in 1usize..30,
            accessed in arb_set(),
            lambda in 0.0f64..=1.0,
        ) {
            let mut t = RecencyTable::new(40, 0.9);
            t.update(&accessed);
            let cfg = SchedulerConfig { lambda, ..Default::default() };
            let plan = select_residency(&cams, &current, capacity, &t, &cfg).unwrap();
            let next = &plan.next_resident;
            prop_assert!(next.len() <= capacity);
            prop_assert_eq!(&plan.keep, &current.intersection(next).copied().collect());
            prop_assert_eq!(&plan.stage_in, &next.difference(&current).copied().collect());
            prop_assert_eq!(&plan.evict, &current.difference(next).copied().collect());
            prop_assert!(plan.keep.is_disjoint(&plan.stage_in));
            let union: BTreeSet<_> = plan.keep.union(&plan.stage_in).copied().collect();
            prop_assert_eq!(&union, next);
            let k_next: BTreeSet<BlockId> = cams.iter().flatten().copied().collect();
            let pool: BTreeSet<BlockId> = current.union(&k_next).copied().collect();
            prop_assert!(next.is_subset(&pool));
            if pool.len() <= capacity {
                prop_assert!(k_next.is_subset(next));
            }
        }

        /// With equal recency, raising lambda never swaps a visible block out
        /// for an invisible one.
        #[test]
        fn lambda_dominance(
            cams in proptest::collection::vec(arb_set(), 1..3),
            current in arb_set(),
            capacity in 1usize..30,
            l1 in 0.0f64..=1.0,
            l2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let t = RecencyTable::new(40, 0.9);
            let k_next: BTreeSet<BlockId> = cams.iter().flatten().copied().collect();
            let run = |lambda| select_residency(&cams, &current, capacity, &t, &SchedulerConfig { lambda, ..Default::default() }).unwrap();
            let a = run(lo).next_resident;
            let b = run(hi).next_resident;
            let visible_a = a.intersection(&k_next).count();
            let visible_b = b.intersection(&k_next).count();
            prop_assert!(visible_b >= visible_a);
        }
    }
}
