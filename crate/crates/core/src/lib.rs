//! Streaming continual-learning engine built from capacity-bounded online
//! clustering units arranged in a receptive-field hierarchy with
//! predictive-coding feedback, plus the evaluation harness and persistence
//! shell around it.
//!
//! - [`unit`] — the single-unit clustering core: nearest-centroid assignment,
//!   incremental updates, novelty-driven spawning, overlap merging, LRU
//!   eviction.
//! - [`hierarchy`] — receptive-field tiling, the feedforward/feedback settle
//!   loop, reconstruction.
//! - [`streams`] — IDX parsing/writing, synthetic prototype streams,
//!   class-incremental schedules, brightness shifts.
//! - [`evaluation`] — purity, few-shot labeling and classification,
//!   forgetting, centroid drift, memory audit, reconstruction error.
//! - [`config`], [`checkpoint`], [`report`], [`pgm`] — the persistence
//!   formats: run configuration, deterministic text checkpoints, CSV
//!   reports, binary PGM centroid export.
//! - [`runner`] — the batch engine driving train/eval/inspect/gen-data.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod pgm;
pub mod report;
pub mod runner;
pub mod streams;
pub mod unit;

pub use error::{Result, StamError};
pub use hierarchy::{Hierarchy, LayerSpec, ReceptiveField, SettleTrace};
pub use unit::{Assignment, CentroidRecord, Exemplar, StamUnit, UnitConfig};
