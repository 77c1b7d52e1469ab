use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ops::{self, ConvGeometry};

/// Frozen convolutional feature extractor for single-channel maps.
///
/// Each layer is conv (no bias) followed by ReLU; the post-ReLU output of
/// every layer is a feature tap.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet {
    layers: Vec<(Array4<f64>, ConvGeometry)>,
}

impl FeatureNet {
    pub const DEFAULT_CHANNELS: [usize; 3] = [8, 16, 16];

    /// Three stride-2 3×3 layers with 8/16/16 channels, He-initialized from `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self::with_channels(&Self::DEFAULT_CHANNELS, seed)
    }

    pub fn with_channels(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 1;
        let layers = channels
            .iter()
            .map(|&out_c| {
                let fan_in = in_c * 9;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                let w = Array4::from_shape_simple_fn((out_c, in_c, 3, 3), || normal.sample(&mut rng));
                in_c = out_c;
                (w, ConvGeometry::new(3, 2, 1))
            })
            .collect();
        Self { layers }
    }

    /// One layer whose only tap is the input itself (for nonnegative inputs).
    pub fn identity() -> Self {
        Self {
            layers: vec![(Array4::ones((1, 1, 1, 1)), ConvGeometry::POINTWISE)],
        }
    }

    /// Kernels `[O, I, 3, 3]` and geometries, input side first.
    pub fn layers(&self) -> &[(Array4<f64>, ConvGeometry)] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Feature taps for a `[N, 1, H, W]` batch.
    pub fn features(&self, x: &Array4<f64>) -> Vec<Array4<f64>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (w, g) in &self.layers {
            h = ops::relu(ops::conv2d(&h, w, None, *g));
            out.push(h.clone());
        }
        out
    }

    /// Input gradient given gradients at each tap (taps without gradient
    /// are `None`).
    pub fn backward(&self, x: &Array4<f64>, taps: &[Array4<f64>], dtaps: Vec<Option<Array4<f64>>>) -> Array4<f64> {
        let mut carry: Option<Array4<f64>> = None;
        for (i, dtap) in dtaps.into_iter().enumerate().rev() {
            let d = match (dtap, carry.take()) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Array4::zeros(taps[i].dim()),
            };
            let dz = ops::relu_backward(&d, &taps[i]);
            let input = if i == 0 { x } else { &taps[i - 1] };
            let (w, g) = &self.layers[i];
            carry = ops::conv2d_backward(input, w, &dz, *g, true).input;
        }
        carry.unwrap_or_else(|| Array4::zeros(x.dim()))
    }
}
