//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use oocsplat::blocking::{BlockBound, BlockOrder};
use oocsplat::commands::{build_store, render_targets};
use oocsplat::formats::LayoutFile;
use oocsplat::log_store::{Store, StoreOptions};
use oocsplat::param_table::{BlockPayload, TableConfig};
use oocsplat::pipeline::{IterationStats, Pipeline, PipelineConfig};
use oocsplat::trainer::scene::{perturb_scene, synth_scene, synth_views, SynthSpec};
use oocsplat::trainer::{run_schedule, view_schedule, AdamConfig, Image, OrderMode, ToyCompute, TOY_DIM};
use oocsplat::visibility::Camera;
use tempfile::TempDir;

/// A built toy store plus everything needed to train on it.
pub struct ToyScene {
    pub dir: TempDir,
    pub table: TableConfig,
    /// Initial rows in stored (blocked) order.
    pub rows: Vec<f32>,
    pub bounds: Vec<BlockBound>,
    pub cams: Vec<Camera>,
    pub targets: Vec<Image>,
}

impl ToyScene {
    pub fn build(spec: &SynthSpec, block_size: usize, order: BlockOrder, jitter: f64) -> Self {
        let truth = synth_scene(spec);
        let init = perturb_scene(&truth, jitter, spec.seed);
        let cams = synth_views(spec);
        let targets = render_targets(&truth, &cams).unwrap();
        let dir = tempfile::tempdir().unwrap();
        build_store(TOY_DIM, &init, dir.path(), block_size, order, StoreOptions::default()).unwrap();
        let layout = LayoutFile::load(dir.path()).unwrap();
        let rows = oocsplat::commands::permute_rows(&init, TOY_DIM, &layout.permutation);
        Self {
            dir,
            table: layout.table,
            rows,
            bounds: layout.bounds,
            cams,
            targets,
        }
    }

    /// Opens a fresh copy of the store so every run starts from the base.
    pub fn open_store(&self, opts: StoreOptions) -> (TempDir, Arc<Store>) {
        let copy = tempfile::tempdir().unwrap();
        for entry in std::fs::read_dir(self.dir.path()).unwrap() {
            let p = entry.unwrap().path();
            std::fs::copy(&p, copy.path().join(p.file_name().unwrap())).unwrap();
        }
        let store = Arc::new(Store::open(copy.path(), opts).unwrap());
        (copy, store)
    }

    pub fn pipeline(&self, cfg: PipelineConfig) -> (TempDir, Pipeline) {
        let (dir, store) = self.open_store(StoreOptions::default());
        let p = Pipeline::new(store, self.bounds.clone(), self.cams.clone(), cfg).unwrap();
        (dir, p)
    }

    pub fn initial_blocks(&self) -> Vec<BlockPayload> {
        (0..self.table.k_blocks())
            .map(|k| BlockPayload::from_table(&self.rows, k, &self.table))
            .collect()
    }
}

pub struct RunResult {
    pub stats: Vec<IterationStats>,
    pub final_table: Vec<BlockPayload>,
    pub pipeline: Pipeline,
    pub _dir: TempDir,
}

pub fn train(scene: &ToyScene, cfg: PipelineConfig, mode: OrderMode, seed: u64, iterations: usize) -> RunResult {
    let (dir, mut p) = scene.pipeline(cfg);
    let mut c = ToyCompute::new(scene.targets.clone(), AdamConfig::default());
    let schedule = view_schedule(&scene.cams, mode, seed, 1, iterations);
    let stats = run_schedule(&mut p, &mut c, &schedule, |_| {}).unwrap();
    let final_table = p.logical_table().unwrap();
    RunResult {
        stats,
        final_table,
        pipeline: p,
        _dir: dir,
    }
}
