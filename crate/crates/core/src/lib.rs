//! Precipitation nowcasting dataset construction and verification.
//!
//! Rain-gauge networks report irregularly in space and at different
//! cadences; reanalysis and NWP backgrounds are regular and complete. This
//! crate fuses the two into hourly cell grids (station maximum where a cell
//! has operating gauges, background corner maximum elsewhere), cuts the
//! fused series into sliding `(X, Y)` windows, serializes them as tensors,
//! and verifies gridded forecasts per precipitation level.
//!
//! Modules, in pipeline order:
//!
//! - [`grid`]: region geometry and cell membership
//! - [`ingest`]: station CSVs, hourly accumulation, grid packs
//! - [`fusion`]: per-cell station/background fusion and feature grids
//! - [`windowing`]: segments, sliding windows, chronological split
//! - [`tensor`]: `STFT` tensor files with JSON sidecars
//! - [`metrics`]: confusion matrix, F1, MAE/bias, weighted MAE, Spearman
//! - [`baseline`]: persistence and climatology forecasters
//! - [`pipeline`]: end-to-end commands driven by [`config::PipelineConfig`]

pub mod baseline;
pub mod config;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
mod util;
pub mod windowing;

pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use fusion::{Background, DatasetVersion, FeatureGrid, FusedGrid, FusedStep, Fuser, Provenance};
pub use grid::{CellIndex, GridNode, GridSpec};
pub use ingest::{GridSource, Lattice, StationCatalog, StationObservation, StationStore, StationSystem};
pub use metrics::{ConfusionMatrix, EvaluationMask, EvaluationReport, PrecipLevel};
pub use windowing::{Example, Segment, SplitFractions, WindowConfig};
