//! Per-iteration CSV, run summary, and recomputation of the summary from
//! the CSV.
//!
//! Churn rates are normalized by iterations × mean resident blocks. The mean
//! resident streak is resident block-iterations divided by admissions, where
//! every admission either ended in an eviction or is still resident at the
//! end of the run.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::IterationStats;

pub const CSV_COLUMNS: [&str; 15] = [
    "iter",
    "stage_in_bytes",
    "evict_bytes",
    "ssd_read_bytes",
    "ssd_write_bytes",
    "cache_hits",
    "cache_misses",
    "evictions",
    "readmissions",
    "cold_restart_updates",
    "total_updates",
    "wait_ms",
    "compute_ms",
    "wall_ms",
    "loss",
];

pub fn write_csv(path: &Path, rows: &[IterationStats]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    // explicit header so an empty run still documents its columns
    w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.stage_in_bytes.to_string(),
            r.evict_bytes.to_string(),
            r.ssd_read_bytes.to_string(),
            r.ssd_write_bytes.to_string(),
            r.cache_hits.to_string(),
            r.cache_misses.to_string(),
            r.evictions.to_string(),
            r.readmissions.to_string(),
            r.cold_restart_updates.to_string(),
            r.total_updates.to_string(),
            format!("{:?}", r.wait_ms),
            format!("{:?}", r.compute_ms),
            format!("{:?}", r.wall_ms),
            format!("{:?}", r.loss),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.into(),
        line,
        msg: e.to_string(),
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<IterationStats>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("unexpected columns {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Quantities the CSV alone cannot carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidencyTotals {
    pub mean_resident_blocks: f64,
    pub final_resident_blocks: u64,
    pub block_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: u64,
    pub mean_wall_ms: f64,
    pub mean_compute_ms: f64,
    pub mean_wait_ms: f64,
    /// 1 − wait/wall over the run; stands in for device utilization.
    pub busy_fraction: f64,
    pub stage_in_bytes_per_iter: f64,
    pub evict_bytes_per_iter: f64,
    /// Arena↔cache traffic in both directions.
    pub transfer_bytes_per_iter: f64,
    pub ssd_read_bytes_per_iter: f64,
    pub ssd_write_bytes_per_iter: f64,
    pub cache_hit_rate: f64,
    pub evictions: u64,
    pub readmissions: u64,
    pub eviction_rate: f64,
    pub readmission_rate: f64,
    pub cold_restart_ratio: f64,
    pub mean_resident_streak: f64,
    pub final_loss: f64,
    pub residency: ResidencyTotals,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn summarize(rows: &[IterationStats], residency: ResidencyTotals) -> Summary {
    let n = rows.len() as f64;
    let sum = |f: fn(&IterationStats) -> f64| rows.iter().map(f).sum::<f64>();
    let sum_u = |f: fn(&IterationStats) -> u64| rows.iter().map(f).sum::<u64>();
    let wall = sum(|r| r.wall_ms);
    let wait = sum(|r| r.wait_ms);
    let hits = sum_u(|r| r.cache_hits);
    let misses = sum_u(|r| r.cache_misses);
    let evictions = sum_u(|r| r.evictions);
    let readmissions = sum_u(|r| r.readmissions);
    let resident_iters = n * residency.mean_resident_blocks;
    let admissions = evictions + residency.final_resident_blocks;
    Summary {
        iterations: rows.len() as u64,
        mean_wall_ms: ratio(wall, n),
        mean_compute_ms: ratio(sum(|r| r.compute_ms), n),
        mean_wait_ms: ratio(wait, n),
        busy_fraction: if wall > 0.0 { 1.0 - wait / wall } else { 0.0 },
        stage_in_bytes_per_iter: ratio(sum_u(|r| r.stage_in_bytes) as f64, n),
        evict_bytes_per_iter: ratio(sum_u(|r| r.evict_bytes) as f64, n),
        transfer_bytes_per_iter: ratio(sum_u(|r| r.stage_in_bytes + r.evict_bytes) as f64, n),
        ssd_read_bytes_per_iter: ratio(sum_u(|r| r.ssd_read_bytes) as f64, n),
        ssd_write_bytes_per_iter: ratio(sum_u(|r| r.ssd_write_bytes) as f64, n),
        cache_hit_rate: ratio(hits as f64, (hits + misses) as f64),
        evictions,
        readmissions,
        eviction_rate: ratio(evictions as f64, resident_iters),
        readmission_rate: ratio(readmissions as f64, resident_iters),
        cold_restart_ratio: ratio(
            sum_u(|r| r.cold_restart_updates) as f64,
            sum_u(|r| r.total_updates) as f64,
        ),
        mean_resident_streak: ratio(resident_iters, admissions as f64),
        final_loss: rows.last().map_or(0.0, |r| r.loss),
        residency,
    }
}

/// Field-by-field comparison; returns the names of fields that differ by
/// more than `tol` (relative to max(1, |value|)).
pub fn summary_mismatches(a: &Summary, b: &Summary, tol: f64) -> Vec<String> {
    let close = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(1.0) || (x.is_nan() && y.is_nan());
    let fields: [(&str, f64, f64); 19] = [
        ("iterations", a.iterations as f64, b.iterations as f64),
        ("mean_wall_ms", a.mean_wall_ms, b.mean_wall_ms),
        ("mean_compute_ms", a.mean_compute_ms, b.mean_compute_ms),
        ("mean_wait_ms", a.mean_wait_ms, b.mean_wait_ms),
        ("busy_fraction", a.busy_fraction, b.busy_fraction),
        ("stage_in_bytes_per_iter", a.stage_in_bytes_per_iter, b.stage_in_bytes_per_iter),
        ("evict_bytes_per_iter", a.evict_bytes_per_iter, b.evict_bytes_per_iter),
        ("transfer_bytes_per_iter", a.transfer_bytes_per_iter, b.transfer_bytes_per_iter),
        ("ssd_read_bytes_per_iter", a.ssd_read_bytes_per_iter, b.ssd_read_bytes_per_iter),
        ("ssd_write_bytes_per_iter", a.ssd_write_bytes_per_iter, b.ssd_write_bytes_per_iter),
        ("cache_hit_rate", a.cache_hit_rate, b.cache_hit_rate),
        ("evictions", a.evictions as f64, b.evictions as f64),
        ("readmissions", a.readmissions as f64, b.readmissions as f64),
        ("eviction_rate", a.eviction_rate, b.eviction_rate),
        ("readmission_rate", a.readmission_rate, b.readmission_rate),
        ("cold_restart_ratio", a.cold_restart_ratio, b.cold_restart_ratio),
        ("mean_resident_streak", a.mean_resident_streak, b.mean_resident_streak),
        ("final_loss", a.final_loss, b.final_loss),
        (
            "mean_resident_blocks",
            a.residency.mean_resident_blocks,
            b.residency.mean_resident_blocks,
        ),
    ];
    fields
        .iter()
        .filter(|(_, x, y)| !close(*x, *y))
        .map(|(name, _, _)| (*name).to_string())
        .collect()
}

/// Full report written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: Summary,
    pub final_psnr: f64,
    pub final_mse: f64,
    /// Gradient variation of the first epoch's view order on final parameters.
    pub v_pi: f64,
    pub config: crate::config::RunConfig,
}
