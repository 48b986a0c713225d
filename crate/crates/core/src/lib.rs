//! Out-of-core training engine for large per-primitive parameter tables.
//!
//! Parameters live in fixed-size blocks across three tiers: an append-only
//! log-structured store on disk, a byte-bounded LRU host cache, and a
//! capacity-bounded resident arena where compute happens. Each iteration
//! culls blocks against the camera batch, stages only the residency delta
//! for the next batch while the current one computes, and writes updated
//! blocks back lazily.

pub mod blocking;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod host_cache;
pub mod log_store;
pub mod metrics;
pub mod param_table;
pub mod pipeline;
pub mod tide_scheduler;
pub mod trainer;
pub mod visibility;

pub use error::{Error, Result};
