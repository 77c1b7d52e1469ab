#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflect_sod::losses::{GroundTruthMask, StructuralLoss};
use reflect_sod::network::{Mode, SfcnConfig, SfcnParams, Sfcn};
use reflect_sod::reflection::{reflect, ImageTensor, MeanImage, ReciprocalPair};

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::new(ndarray::Array3::from_shape_fn((3, h, w), |_| rng.random_range(0.0..1.0))).unwrap()
}

/// Rectangle mask covering roughly a quarter of the image.
pub fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> GroundTruthMask {
    let y0 = rng.random_range(0..h / 2);
    let x0 = rng.random_range(0..w / 2);
    let (mh, mw) = (h / 2, w / 2);
    GroundTruthMask::new(Array2::from_shape_fn((h, w), |(y, x)| {
        u8::from(y >= y0 && y < y0 + mh && x >= x0 && x < x0 + mw)
    }))
    .unwrap()
}

pub fn random_pairs(config: &SfcnConfig, n: usize, seed: u64) -> (Vec<ReciprocalPair>, Vec<GroundTruthMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w] = config.input_size;
    let mean = MeanImage::ScalarPerChannel([0.5, 0.45, 0.4]);
    let pairs = (0..n)
        .map(|_| reflect(&random_image(h, w, &mut rng), &mean, 1.0).unwrap())
        .collect();
    let masks = (0..n).map(|_| random_mask(h, w, &mut rng)).collect();
    (pairs, masks)
}

pub fn probs(maps: &[reflect_sod::network::SaliencyMap]) -> Array3<f64> {
    let views: Vec<_> = maps.iter().map(|m| m.probabilities.view().insert_axis(ndarray::Axis(0))).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
}

/// Train-mode loss at the given trainable vector, evaluated on a fresh copy
/// of the parameters so running statistics never leak between evaluations.
pub fn loss_at(
    config: &SfcnConfig,
    base: &SfcnParams,
    theta: &[f64],
    pairs: &[ReciprocalPair],
    gts: &[GroundTruthMask],
    loss: &StructuralLoss,
) -> f64 {
    let mut params = base.clone();
    params.set_trainable_vector(theta).unwrap();
    let mut model = Sfcn::from_parts(config.clone(), params);
    let maps = model.forward(pairs, Mode::Train).unwrap();
    loss.evaluate(&probs(&maps), gts).unwrap().total
}

/// Central finite differences of `f` at `theta`.
pub fn central_differences(theta: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Pass if within `abs` absolutely or `rel` relatively.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

/// `n` rendered 64×64 scenes of the default generator.
pub fn scene_samples(n: u64, seed: u64) -> Vec<reflect_sod::data::Sample> {
    let spec = reflect_sod::data::SyntheticSceneSpec {
        seed,
        ..Default::default()
    };
    (0..n)
        .map(|i| {
            let (image, mask) = reflect_sod::data::render_scene(&spec, i).unwrap();
            reflect_sod::data::Sample {
                stem: format!("scene_{i}"),
                image,
                mask,
            }
        })
        .collect()
}

/// Desk-scale run on fixed images without augmentation.
pub fn overfit_config(preset: reflect_sod::training::AblationPreset, seed: u64, steps: u64) -> reflect_sod::config::Config {
    let mut c = reflect_sod::config::Config::default();
    c.train.preset = preset;
    c.train.seed = seed;
    c.train.max_steps = steps;
    c.train.eval_every = 0;
    c.data.augment = false;
    c
}

/// Direct-loop cross-correlation, `w` is `[O, I, k, k]`.
pub fn naive_conv(x: &ndarray::Array4<f64>, w: &ndarray::Array4<f64>, stride: usize, pad: usize) -> ndarray::Array4<f64> {
    let (n, c, h, wd) = x.dim();
    let (o, _, k, _) = w.dim();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    ndarray::Array4::from_shape_fn((n, o, ho, wo), |(b, oc, oy, ox)| {
        let mut acc = 0.0;
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += w[[oc, ic, ky, kx]] * x[[b, ic, iy as usize, ix as usize]];
                    }
                }
            }
        }
        acc
    })
}
