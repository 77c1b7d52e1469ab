//! Browser bindings: a synthetic scene, its reciprocal pair, the loss terms
//! and the saliency metrics of a tunable prediction.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use reflect_sod::data::{render_scene, SyntheticSceneSpec};
use reflect_sod::losses::{total_loss, FeatureNet, GroundTruthMask, LossWeights};
use reflect_sod::metrics::{evaluate_image, EvalOptions};
use reflect_sod::reflection::{reflect, ImageTensor, MeanImage};

#[wasm_bindgen]
pub struct Scene {
    image: ImageTensor,
    mask: GroundTruthMask,
    noise: Array2<f64>,
    featnet: FeatureNet,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize) -> Result<Scene, JsError> {
        Scene::build(seed, size).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn width(&self) -> usize {
        self.mask.dim().1
    }

    pub fn height(&self) -> usize {
        self.mask.dim().0
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        rgba_from_channels(&self.image.data, |v| v)
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        gray_rgba(&self.mask.to_real())
    }

    /// `k (M - X)` with `M` the per-channel image mean, drawn around mid-gray.
    pub fn reflected_rgba(&self, k: f64) -> Vec<u8> {
        match self.reflected(k) {
            Some(r) => rgba_from_channels(&r, |v| 0.5 + v / (2.0 * k.max(1.0))),
            None => Vec::new(),
        }
    }

    pub fn prediction_rgba(&self, softness: f64, noise: f64) -> Vec<u8> {
        gray_rgba(&self.prediction(softness, noise))
    }

    /// `[wbce, sc, s1, total]` of the prediction.
    pub fn loss_terms(&self, softness: f64, noise: f64, mu: f64, gamma: f64) -> Vec<f64> {
        let weights = LossWeights {
            mu,
            gamma,
            ..LossWeights::default()
        };
        match total_loss(self.prediction(softness, noise).view(), &self.mask, &weights, &self.featnet) {
            Ok(b) => vec![b.pixel, b.sc, b.s1, b.total],
            Err(_) => Vec::new(),
        }
    }

    /// `[max-F, adaptive F, MAE, S, precision x 256, recall x 256]`.
    pub fn metrics(&self, softness: f64, noise: f64) -> Vec<f64> {
        let pred = self.prediction(softness, noise);
        let Ok(e) = evaluate_image("demo", pred.view(), &self.mask, &EvalOptions::default()) else {
            return Vec::new();
        };
        let m = e.metrics;
        let mut out = vec![m.fmax, m.fadaptive, m.mae, m.smeasure];
        out.extend(&e.curve.precision);
        out.extend(&e.curve.recall);
        out
    }
}

impl Scene {
    pub fn build(seed: u64, size: usize) -> reflect_sod::Result<Scene> {
        let spec = SyntheticSceneSpec {
            size: [size, size],
            seed,
            ..SyntheticSceneSpec::default()
        };
        let (image, mask) = render_scene(&spec, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let noise = Array2::from_shape_fn(mask.dim(), |_| rng.random_range(-1.0..1.0));
        Ok(Scene {
            image,
            mask,
            noise,
            featnet: FeatureNet::seeded(LossWeights::default().featnet_seed),
        })
    }

    pub fn reflected(&self, k: f64) -> Option<Array3<f64>> {
        let mean = self.image.data.mean_axis(ndarray::Axis(2))?.mean_axis(ndarray::Axis(1))?;
        let pair = reflect(&self.image, &MeanImage::ScalarPerChannel([mean[0], mean[1], mean[2]]), k).ok()?;
        Some(pair.reflected.data)
    }

    /// Ground truth pulled toward 0.5 by `softness` plus fixed noise of
    /// amplitude `noise`, clamped to `[0, 1]`.
    pub fn prediction(&self, softness: f64, noise: f64) -> Array2<f64> {
        let gt = self.mask.to_real();
        let s = softness.clamp(0.0, 1.0);
        let mut out = gt.mapv(|g| (1.0 - s) * g + s * 0.5);
        out.zip_mut_with(&self.noise, |p, &n| *p = (*p + noise * n).clamp(0.0, 1.0));
        out
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgba_from_channels(data: &Array3<f64>, map: impl Fn(f64) -> f64) -> Vec<u8> {
    let (_, h, w) = data.dim();
    let mut out = Vec::with_capacity(h * w * 4);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_byte(map(data[[c, y, x]])));
            }
            out.push(255);
        }
    }
    out
}

fn gray_rgba(map: &Array2<f64>) -> Vec<u8> {
    map.iter().flat_map(|&v| {
        let b = to_byte(v);
        [b, b, b, 255]
    }).collect()
}
