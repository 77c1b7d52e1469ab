//! The symmetrical FCN: weight-shared sibling encoders with per-branch
//! batch normalization, a top-down fusing branch and a two-filter head.

mod config;
mod model;
mod params;

pub use config::{FusionMode, SfcnConfig, OUTPUT_CLASSES};
pub use model::{stack_images, Branch, FeatureStack, GradientScope, Mode, SaliencyMap, Sfcn};
pub use params::{BnState, Conv, FusionLevel, Gradients, Role, SfcnParams};
