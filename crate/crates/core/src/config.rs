//! Run configuration, loadable from a TOML file and overridable from flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log_store::{StoreOptions, DEFAULT_SEGMENT_BUDGET};
use crate::param_table::DEFAULT_BLOCK_SIZE;
use crate::pipeline::PipelineConfig;
use crate::tide_scheduler::SchedulerConfig;
use crate::trainer::{AdamConfig, OrderMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Primitives per block.
    pub block_size: usize,
    /// Morton-order primitives before blocking; off means a seeded random
    /// permutation.
    pub morton: bool,
    pub iterations: usize,
    pub batch_size: usize,
    pub order: OrderMode,
    pub arena_blocks: usize,
    pub cache_bytes: u64,
    pub overlap: bool,
    pub tide: bool,
    pub transfer_latency_us: u64,
    pub read_latency_us: u64,
    pub write_latency_us: u64,
    pub segment_budget: u64,
    pub scheduler: SchedulerConfig,
    pub adam: AdamConfig,
    /// When set, `train` (re)builds the store from this scene first.
    pub scene: Option<PathBuf>,
    pub store: PathBuf,
    pub views: PathBuf,
    pub targets: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            block_size: DEFAULT_BLOCK_SIZE,
            morton: true,
            iterations: 500,
            batch_size: 1,
            order: OrderMode::Trajectory,
            arena_blocks: 64,
            cache_bytes: crate::host_cache::DEFAULT_CACHE_BYTES,
            overlap: true,
            tide: true,
            transfer_latency_us: 0,
            read_latency_us: 0,
            write_latency_us: 0,
            segment_budget: DEFAULT_SEGMENT_BUDGET,
            scheduler: SchedulerConfig::default(),
            adam: AdamConfig::default(),
            scene: None,
            store: PathBuf::from("store"),
            views: PathBuf::from("views.txt"),
            targets: PathBuf::from("targets.bin"),
            out: PathBuf::from("report"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Parse {
                path: path.into(),
                line: 0,
                msg,
            },
            e => e,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.scheduler.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.block_size == 0 {
            return bad("block_size must be >= 1");
        }
        if self.arena_blocks == 0 {
            return bad("arena_blocks must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam needs lr > 0 and betas in [0, 1)");
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            arena_blocks: self.arena_blocks,
            cache_bytes: self.cache_bytes,
            scheduler: self.scheduler,
            overlap: self.overlap,
            tide: self.tide,
            transfer_latency: Duration::from_micros(self.transfer_latency_us),
            record_events: false,
        }
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            segment_budget: self.segment_budget,
            read_latency: Duration::from_micros(self.read_latency_us),
            write_latency: Duration::from_micros(self.write_latency_us),
        }
    }
}
