use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of prediction filters (background, foreground).
pub const OUTPUT_CLASSES: usize = 2;

/// How the sibling features are merged into the full-resolution map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Top-down `f_l = h([g_l, up(f_{l+1}), g*_l])` at every level.
    Hierarchical,
    /// Only the deepest level: `h([g_L, g*_L])` upsampled straight to full size.
    ConcatOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfcnConfig {
    pub levels: usize,
    pub convs_per_level: Vec<usize>,
    pub channels_per_level: Vec<usize>,
    /// `[height, width]`
    pub input_size: [usize; 2],
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Share BN scale/shift between the branches (statistics stay per-branch).
    pub share_affine: bool,
    pub fusion: FusionMode,
}

impl Default for SfcnConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SfcnConfig {
    /// Three-level network small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            levels: 3,
            convs_per_level: vec![1, 1, 1],
            channels_per_level: vec![8, 16, 32],
            input_size: [64, 64],
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            share_affine: false,
            fusion: FusionMode::Hierarchical,
        }
    }

    /// VGG-16 shaped sibling branches (13 convs, 4 pools) at 384×384.
    pub fn paper() -> Self {
        Self {
            levels: 5,
            convs_per_level: vec![2, 2, 3, 3, 3],
            channels_per_level: vec![64, 128, 256, 512, 512],
            input_size: [384, 384],
            ..Self::desk()
        }
    }

    /// Gradient-check scale: channels 4/8/8 at 16×16.
    pub fn tiny() -> Self {
        Self {
            channels_per_level: vec![4, 8, 8],
            input_size: [16, 16],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.levels < 2 {
            return fail(format!("model.levels must be >= 2, got {}", self.levels));
        }
        if self.channels_per_level.len() != self.levels {
            return fail(format!(
                "model.channels_per_level has {} entries, expected {}",
                self.channels_per_level.len(),
                self.levels
            ));
        }
        if self.convs_per_level.len() != self.levels {
            return fail(format!(
                "model.convs_per_level has {} entries, expected {}",
                self.convs_per_level.len(),
                self.levels
            ));
        }
        if self.channels_per_level.contains(&0) || self.convs_per_level.contains(&0) {
            return fail("model channel and conv counts must be positive".into());
        }
        let div = 1usize << (self.levels - 1);
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return fail(format!("model.input_size {h}x{w} must be divisible by {div}"));
        }
        if !(self.bn_epsilon > 0.0) {
            return fail("model.bn_epsilon must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return fail("model.bn_momentum must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Level index of every encoder conv layer, in execution order.
    pub fn layer_levels(&self) -> Vec<usize> {
        self.convs_per_level
            .iter()
            .enumerate()
            .flat_map(|(level, &n)| std::iter::repeat_n(level, n))
            .collect()
    }

    /// Spatial size `[h, w]` of level `level` (0-based).
    pub fn level_size(&self, level: usize) -> [usize; 2] {
        [self.input_size[0] >> level, self.input_size[1] >> level]
    }
}
