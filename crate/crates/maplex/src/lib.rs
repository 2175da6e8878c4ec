//! Few-shot latency prediction for cell-based DNN architectures.
//!
//! Given latency tables from a pool of training devices and a handful of
//! measured samples from an unseen target device, this crate synthesizes
//! virtual training examples from latency neighborhoods and a layer-wise
//! per-operation cost table, weights training samples by hardware-spec
//! similarity, and trains a hardware-aware latency regressor evaluated
//! under a leave-one-device-out protocol.
//!
//! Modules follow the pipeline order:
//!
//! - [`archspace`]: the 5-op / 6-edge cell search space and its encodings
//! - [`dataset`]: CSV ingestion, synthetic benchmark generation, splits
//! - [`lut`]: per-operation layer-wise latency tables (fit + evaluate)
//! - [`prior`]: latency-neighborhood discovery and virtual-label synthesis
//! - [`weighting`]: hardware-similarity importance weights
//! - [`regressor`]: the weighted MLP latency regressor
//! - [`eval`]: metrics, correlation analyses, leave-one-device-out harness
//! - [`manifest`]: reproducibility manifests emitted by the CLI

pub mod archspace;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod lut;
pub mod manifest;
pub mod numfmt;
pub mod prior;
pub mod regressor;
pub mod weighting;

pub use error::{Error, Result};
