//! Implementations behind the `oocsplat` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocking::{build_layout, BlockOrder, Dims};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{read_scene, read_targets, read_views, write_scene, write_targets, write_views, LayoutFile};
use crate::log_store::{Store, StoreOptions};
use crate::metrics::{read_csv, summarize, summary_mismatches, write_csv, ResidencyTotals, RunReport, Summary};
use crate::param_table::{block_payload_bytes, BlockPayload, TableConfig};
use crate::pipeline::{IterationStats, Pipeline};
use crate::trainer::scene::{perturb_scene, synth_scene, synth_views, SynthSpec};
use crate::trainer::{
    active_prims, evaluate, gradient_variation, order_views, render, run_schedule, view_gradient, view_schedule, Image,
    ToyCompute, ToyGeometry, TOY_DIM,
};
use crate::visibility::{Camera, PrimitiveGeometry, SplatGeometry3D};

pub const CSV_FILE: &str = "stats.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Files written by `synth`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthPaths {
    pub scene: PathBuf,
    pub truth: PathBuf,
    pub views: PathBuf,
    pub targets: PathBuf,
}

/// Renders every view of a full (unblocked) toy table.
pub fn render_targets(rows: &[f32], cams: &[Camera]) -> Result<Vec<Image>> {
    let n = rows.len() / TOY_DIM;
    let table = TableConfig::new(n as u64, TOY_DIM, n.max(1))?;
    let blocks = [BlockPayload::from_table(rows, 0, &table)];
    cams.iter()
        .map(|c| Ok(render(c, &active_prims(&blocks, &table, c)?)?.image))
        .collect()
}

/// Writes a synthetic scene: the initial guess (`scene.txt`), the ground
/// truth (`truth.txt`), the views and their target images.
pub fn cmd_synth(spec: &SynthSpec, jitter: f64, dir: &Path) -> Result<SynthPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let truth = synth_scene(spec);
    let init = perturb_scene(&truth, jitter, spec.seed);
    let cams = synth_views(spec);
    let targets = render_targets(&truth, &cams)?;
    let paths = SynthPaths {
        scene: dir.join("scene.txt"),
        truth: dir.join("truth.txt"),
        views: dir.join("views.txt"),
        targets: dir.join("targets.bin"),
    };
    write_scene(&paths.scene, TOY_DIM, &init)?;
    write_scene(&paths.truth, TOY_DIM, &truth)?;
    write_views(&paths.views, &cams)?;
    write_targets(&paths.targets, &targets)?;
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub n_primitives: u64,
    pub dim: usize,
    pub k_blocks: u32,
    pub block_bytes: u64,
    pub base_bytes: u64,
    pub mean_radius: f64,
    pub build_ms: f64,
}

/// Reorders rows by `permutation[new] = old`.
pub fn permute_rows(rows: &[f32], dim: usize, permutation: &[u32]) -> Vec<f32> {
    permutation
        .iter()
        .flat_map(|&i| rows[i as usize * dim..(i as usize + 1) * dim].iter().copied())
        .collect()
}

/// Bounding geometry implied by the row width: the 9-wide toy layout is
/// 2D, anything else uses the 3D splat layout (position, log-scales first).
pub fn geometry_for(dim: usize) -> Result<(Box<dyn PrimitiveGeometry>, Dims)> {
    match dim {
        TOY_DIM => Ok((Box::new(ToyGeometry), Dims::Two)),
        d if d >= 6 => Ok((Box::new(SplatGeometry3D), Dims::Three)),
        d => Err(Error::InvalidConfig(format!("rows of width {d} carry no position and scale"))),
    }
}

/// Sorts, blocks and writes the base segment plus the layout sidecar.
pub fn build_store(dim: usize, rows: &[f32], dir: &Path, block_size: usize, order: BlockOrder, opts: StoreOptions) -> Result<BuildReport> {
    let start = Instant::now();
    let n = rows.len() / dim;
    let table = TableConfig::new(n as u64, dim, block_size)?;
    let (geometry, dims) = geometry_for(dim)?;
    let (centers, extents): (Vec<_>, Vec<_>) = rows.chunks_exact(dim).map(|r| geometry.sphere(r)).unzip();
    let layout = build_layout(&centers, &extents, &table, dims, order)?;
    let sorted = permute_rows(rows, dim, &layout.permutation);
    let store = Store::write_base(dir, table, &sorted, opts)?;
    let mean_radius = layout.bounds.iter().map(|b| b.radius).sum::<f64>() / layout.bounds.len() as f64;
    LayoutFile {
        table,
        order,
        permutation: layout.permutation,
        bounds: layout.bounds,
    }
    .save(dir)?;
    Ok(BuildReport {
        n_primitives: n as u64,
        dim,
        k_blocks: table.k_blocks(),
        block_bytes: block_payload_bytes(&table),
        base_bytes: store.disk_bytes()?,
        mean_radius,
        build_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn cmd_build(scene: &Path, dir: &Path, block_size: usize, morton: bool, seed: u64, opts: StoreOptions) -> Result<BuildReport> {
    let (dim, rows) = read_scene(scene)?;
    let order = if morton {
        BlockOrder::Morton
    } else {
        BlockOrder::Random { seed }
    };
    build_store(dim, &rows, dir, block_size, order, opts)
}

/// In-memory result of a training run.
pub struct TrainOutcome {
    pub report: RunReport,
    pub stats: Vec<IterationStats>,
    pub final_table: Vec<BlockPayload>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(scene) = &cfg.scene {
        cmd_build(scene, &cfg.store, cfg.block_size, cfg.morton, cfg.seed, cfg.store_options())?;
    }
    let store = Arc::new(Store::open(&cfg.store, cfg.store_options())?);
    let layout = LayoutFile::load(&cfg.store)?;
    let table = *store.config();
    if layout.table != table {
        return Err(Error::InvalidConfig(format!(
            "layout sidecar describes {:?}, store holds {:?}",
            layout.table, table
        )));
    }
    let cams = read_views(&cfg.views)?;
    let targets = read_targets(&cfg.targets, &cams)?;
    let schedule = view_schedule(&cams, cfg.order, cfg.seed, cfg.batch_size, cfg.iterations);

    let mut pipeline = Pipeline::new(store.clone(), layout.bounds, cams.clone(), cfg.pipeline_config())?;
    let mut compute = ToyCompute::new(targets.clone(), cfg.adam);
    let mut resident_sum = 0u64;
    let stats = run_schedule(&mut pipeline, &mut compute, &schedule, |s| resident_sum += s.resident_blocks as u64)?;

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    pipeline.checkpoint(&cfg.out.join(MANIFEST_FILE), cfg.seed)?;
    let final_table = pipeline.logical_table()?;

    let eval = evaluate(&final_table, &table, &cams, &targets)?;
    let positions: Vec<_> = cams.iter().map(Camera::position).collect();
    let first_epoch = order_views(&positions, cfg.order, cfg.seed).perm;
    let v_pi = gradient_variation(&first_epoch, |_, v| view_gradient(&final_table, &table, &cams[v], &targets[v]))?;

    let residency = ResidencyTotals {
        mean_resident_blocks: if stats.is_empty() {
            0.0
        } else {
            resident_sum as f64 / stats.len() as f64
        },
        final_resident_blocks: pipeline.arena().len() as u64,
        block_bytes: block_payload_bytes(&table),
    };
    let report = RunReport {
        summary: summarize(&stats, residency),
        final_psnr: eval.psnr,
        final_mse: eval.mse,
        v_pi,
        config: cfg.clone(),
    };
    write_csv(&cfg.out.join(CSV_FILE), &stats)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    let path = cfg.out.join(SUMMARY_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(TrainOutcome {
        report,
        stats,
        final_table,
    })
}

/// Returns reclaimed bytes.
pub fn cmd_compact(dir: &Path) -> Result<u64> {
    let mut store = Store::open(dir, StoreOptions::default())?;
    store.compact()
}

pub struct StatsCheck {
    pub recomputed: Summary,
    pub reported: RunReport,
    pub mismatches: Vec<String>,
}

/// Recomputes the summary from `stats.csv` and compares it with
/// `summary.json` in the same report directory.
pub fn cmd_stats(report_dir: &Path) -> Result<StatsCheck> {
    let rows = read_csv(&report_dir.join(CSV_FILE))?;
    let path = report_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let reported: RunReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let recomputed = summarize(&rows, reported.summary.residency);
    let mismatches = summary_mismatches(&reported.summary, &recomputed, 1e-9);
    Ok(StatsCheck {
        recomputed,
        reported,
        mismatches,
    })
}
