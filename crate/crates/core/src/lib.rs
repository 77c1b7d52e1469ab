//! Salient object detection with reciprocal image input.
//!
//! An RGB image is turned into a pair `(X - M, k (M - X))`; two sibling
//! encoders with shared convolutions and per-branch batch normalization
//! process the halves, a fusing branch merges their multi-level features
//! top-down, and a two-filter head predicts the saliency map. Training
//! uses a class-balanced cross-entropy plus a perceptual term and a
//! smooth L1 term. Evaluation covers PR curves, F-measure, MAE and
//! S-measure.

pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod reflection;
pub mod training;

pub use error::{Error, Result};
