//! Weighted structural loss.
//!
//! `L = L_pixel + mu * L_sc + gamma * L_s1`, where the pixel term is a
//! (class-balanced) binary cross-entropy, `L_sc` compares multi-layer
//! features of prediction and ground truth under a frozen network, and
//! `L_s1` is an elementwise smooth L1 penalty. Pixel-wise terms reduce by
//! mean over pixels; every term reduces by mean over the batch.

mod featnet;

pub use featnet::FeatureNet;

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor applied before taking logs.
pub const P_MIN: f64 = 1e-7;

/// Binary ground truth, values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthMask {
    values: Array2<u8>,
}

impl GroundTruthMask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("non-empty mask", values.dim()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Config("ground-truth mask must be binary".into()));
        }
        Ok(Self { values })
    }

    /// Foreground wherever `values >= threshold`.
    pub fn from_real(values: ArrayView2<'_, f64>, threshold: f64) -> Result<Self> {
        Self::new(values.mapv(|v| u8::from(v >= threshold)))
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_real(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// `1 - self`.
    pub fn inverted(&self) -> Self {
        Self {
            values: self.values.mapv(|v| 1 - v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaConvention {
    /// `beta = |Y+| / |Y|` on the foreground term.
    #[serde(alias = "paper-literal")]
    PaperLiteral,
    /// `beta = |Y-| / |Y|` on the foreground term (the rarer class gets the larger weight).
    Complement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Per-layer weights of the semantic content term.
    pub lambda: Vec<f64>,
    pub beta_convention: BetaConvention,
    /// Class-balanced cross-entropy when true, plain cross-entropy otherwise.
    pub weighted: bool,
    /// Use squared L2 norms in the semantic content term.
    pub sc_squared: bool,
    pub featnet_seed: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu: 0.01,
            gamma: 20.0,
            epsilon: 0.5,
            lambda: vec![1.0; 3],
            beta_convention: BetaConvention::Complement,
            weighted: true,
            sc_squared: false,
            featnet_seed: 0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("loss.mu and loss.gamma must be >= 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("loss.epsilon must be > 0".into()));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("loss.lambda entries must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_shape(pred: &ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(gt.dim(), pred.dim()));
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0 - P_MIN)
}

/// `d(-log clamp(p))/dp`, zero where the clamp is active.
fn neg_log_grad(p: f64) -> f64 {
    if (P_MIN..=1.0 - P_MIN).contains(&p) {
        -1.0 / p
    } else {
        0.0
    }
}

/// Sums `(-log p̂ over Y+, -log(1-p̂) over Y-)`, optionally writing the
/// per-pixel gradients of both sums (weighted by `wpos`/`wneg`) into `grad`.
fn cross_entropy_sums(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, grad: Option<(&mut Array2<f64>, f64, f64)>) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&p, &y) in pred.iter().zip(gt.values.iter()) {
        if y == 1 {
            pos -= clamp_p(p).ln();
        } else {
            neg -= (1.0 - clamp_p(p)).ln();
        }
    }
    if let Some((g, wpos, wneg)) = grad {
        ndarray::Zip::from(g).and(&pred).and(&gt.values).for_each(|g, &p, &y| {
            *g += if y == 1 {
                wpos * neg_log_grad(p)
            } else {
                -wneg * neg_log_grad(1.0 - p)
            };
        });
    }
    (pos, neg)
}

/// Pixel-mean binary cross-entropy.
pub fn bce_loss(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<f64> {
    check_shape(&pred, gt)?;
    let (pos, neg) = cross_entropy_sums(pred, gt, None);
    Ok((pos + neg) / gt.len() as f64)
}

/// Foreground weight for the given convention, or `None` for a
/// single-class mask.
pub fn class_balance(gt: &GroundTruthMask, convention: BetaConvention) -> Option<f64> {
    let fg = gt.foreground();
    if fg == 0 || fg == gt.len() {
        return None;
    }
    let frac = fg as f64 / gt.len() as f64;
    Some(match convention {
        BetaConvention::PaperLiteral => frac,
        BetaConvention::Complement => 1.0 - frac,
    })
}

fn weighted_bce_inner(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, convention: BetaConvention, grad: Option<(&mut Array2<f64>, f64)>) -> f64 {
    let t = gt.len() as f64;
    let beta = class_balance(gt, convention);
    if beta.is_none() {
        log::warn!("single-class ground truth; falling back to unweighted cross-entropy");
    }
    let (wpos, wneg) = beta.map_or((1.0, 1.0), |b| (b, 1.0 - b));
    let g = grad.map(|(g, scale)| (g, scale * wpos / t, scale * wneg / t));
    let (pos, neg) = cross_entropy_sums(pred, gt, g);
    (wpos * pos + wneg * neg) / t
}

/// Class-balanced cross-entropy: `(beta * pos + (1 - beta) * neg) / T`.
/// Single-class masks fall back to [`bce_loss`].
pub fn weighted_bce_loss(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, convention: BetaConvention) -> Result<f64> {
    check_shape(&pred, gt)?;
    Ok(weighted_bce_inner(pred, gt, convention, None))
}

/// Per-pixel smooth L1 value of a difference `d`.
pub fn smooth_l1(d: f64, epsilon: f64) -> f64 {
    let a = d.abs();
    if a < epsilon {
        0.5 * d * d
    } else {
        epsilon * a - 0.5 * epsilon * epsilon
    }
}

fn smooth_l1_inner(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, epsilon: f64, grad: Option<(&mut Array2<f64>, f64)>) -> f64 {
    let t = gt.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt.values.iter())
        .map(|(&p, &y)| smooth_l1(f64::from(y) - p, epsilon))
        .sum();
    if let Some((g, scale)) = grad {
        ndarray::Zip::from(g).and(&pred).and(&gt.values).for_each(|g, &p, &y| {
            let d = f64::from(y) - p;
            let dd = if d.abs() < epsilon { d } else { epsilon * d.signum() };
            *g -= scale * dd / t;
        });
    }
    sum / t
}

/// Pixel-mean elementwise smooth L1 of `gt - pred`.
pub fn smooth_l1_loss(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, epsilon: f64) -> Result<f64> {
    check_shape(&pred, gt)?;
    Ok(smooth_l1_inner(pred, gt, epsilon, None))
}

/// Semantic content terms for a batch; returns per-image values and, if
/// requested, `d(scale * sum_n value_n)/d pred`.
fn sc_batch(
    preds: &Array3<f64>,
    gts: &[GroundTruthMask],
    featnet: &FeatureNet,
    lambda: &[f64],
    squared: bool,
    grad_scale: Option<f64>,
) -> Result<(Vec<f64>, Option<Array3<f64>>)> {
    if lambda.len() != featnet.depth() {
        return Err(Error::shape(format!("{} lambda weights", featnet.depth()), lambda.len()));
    }
    let (n, h, w) = preds.dim();
    let mut gt_stack = Array4::zeros((n, 1, h, w));
    for (i, gt) in gts.iter().enumerate() {
        gt_stack.index_axis_mut(Axis(0), i).index_axis_mut(Axis(0), 0).assign(&gt.to_real());
    }
    let pred_stack = preds.clone().insert_axis(Axis(1));
    let fg = featnet.features(&gt_stack);
    let fp = featnet.features(&pred_stack);
    let mut values = vec![0.0; n];
    let mut dtaps = Vec::with_capacity(fp.len());
    for (l, (tg, tp)) in fg.iter().zip(&fp).enumerate() {
        let diff = tp - tg;
        let mut dtap = grad_scale.map(|_| Array4::zeros(diff.dim()));
        for i in 0..n {
            let d = diff.index_axis(Axis(0), i);
            let sq: f64 = d.iter().map(|v| v * v).sum();
            let norm = sq.sqrt();
            values[i] += lambda[l] * if squared { sq } else { norm };
            if let (Some(dt), Some(scale)) = (dtap.as_mut(), grad_scale) {
                let k = if squared {
                    2.0 * lambda[l] * scale
                } else if norm > 0.0 {
                    lambda[l] * scale / norm
                } else {
                    0.0
                };
                dt.index_axis_mut(Axis(0), i).zip_mut_with(&d, |o, &v| *o = k * v);
            }
        }
        dtaps.push(dtap);
    }
    let grad = grad_scale.map(|_| {
        featnet
            .backward(&pred_stack, &fp, dtaps)
            .index_axis_move(Axis(1), 0)
    });
    Ok((values, grad))
}

/// `sum_l lambda_l * ||phi_l(gt) - phi_l(pred)||_2`.
pub fn sc_loss(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, featnet: &FeatureNet, lambda: &[f64]) -> Result<f64> {
    check_shape(&pred, gt)?;
    let preds = pred.to_owned().insert_axis(Axis(0));
    let (v, _) = sc_batch(&preds, std::slice::from_ref(gt), featnet, lambda, false, None)?;
    Ok(v[0])
}

/// Component values of the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Cross-entropy term (class-balanced unless disabled).
    pub pixel: f64,
    pub sc: f64,
    pub s1: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.pixel.is_finite() && self.sc.is_finite() && self.s1.is_finite()
    }
}

/// The structural loss with its frozen feature network.
#[derive(Clone, Debug)]
pub struct StructuralLoss {
    pub weights: LossWeights,
    pub featnet: FeatureNet,
}

impl StructuralLoss {
    pub fn new(weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let featnet = FeatureNet::seeded(weights.featnet_seed);
        if weights.lambda.len() != featnet.depth() {
            return Err(Error::Config(format!(
                "loss.lambda needs {} entries, got {}",
                featnet.depth(),
                weights.lambda.len()
            )));
        }
        Ok(Self { weights, featnet })
    }

    pub fn with_featnet(weights: LossWeights, featnet: FeatureNet) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights, featnet })
    }

    /// Batch-mean loss over `preds` (`[N, H, W]` probabilities).
    pub fn evaluate(&self, preds: &Array3<f64>, gts: &[GroundTruthMask]) -> Result<LossBreakdown> {
        self.run(preds, gts, false).map(|(b, _)| b)
    }

    /// Loss and `dL/dpred`.
    pub fn evaluate_with_grad(&self, preds: &Array3<f64>, gts: &[GroundTruthMask]) -> Result<(LossBreakdown, Array3<f64>)> {
        self.run(preds, gts, true).map(|(b, g)| (b, g.expect("gradient requested")))
    }

    fn run(&self, preds: &Array3<f64>, gts: &[GroundTruthMask], want_grad: bool) -> Result<(LossBreakdown, Option<Array3<f64>>)> {
        let (n, h, w) = preds.dim();
        if n == 0 || n != gts.len() {
            return Err(Error::shape(format!("{} predictions", gts.len()), n));
        }
        for gt in gts {
            if gt.dim() != (h, w) {
                return Err(Error::shape((h, w), gt.dim()));
            }
        }
        let wt = &self.weights;
        let inv_n = 1.0 / n as f64;
        let mut grad = want_grad.then(|| Array3::zeros(preds.dim()));
        let mut out = LossBreakdown::default();
        for (i, gt) in gts.iter().enumerate() {
            let p = preds.index_axis(Axis(0), i);
            let mut g = grad.as_mut().map(|g| g.index_axis_mut(Axis(0), i).to_owned());
            out.pixel += if wt.weighted {
                weighted_bce_inner(p, gt, wt.beta_convention, g.as_mut().map(|g| (g, inv_n)))
            } else {
                let t = gt.len() as f64;
                let (pos, neg) = cross_entropy_sums(p, gt, g.as_mut().map(|g| (g, inv_n / t, inv_n / t)));
                (pos + neg) / t
            } * inv_n;
            out.s1 += smooth_l1_inner(p, gt, wt.epsilon, g.as_mut().map(|g| (g, wt.gamma * inv_n))) * inv_n;
            if let (Some(full), Some(g)) = (grad.as_mut(), g) {
                full.index_axis_mut(Axis(0), i).assign(&g);
            }
        }
        let sc_scale = (want_grad && wt.mu != 0.0).then_some(wt.mu * inv_n);
        let (sc_values, sc_grad) = sc_batch(preds, gts, &self.featnet, &wt.lambda, wt.sc_squared, sc_scale)?;
        out.sc = sc_values.iter().sum::<f64>() * inv_n;
        if let (Some(g), Some(sg)) = (grad.as_mut(), sc_grad) {
            *g += &sg;
        }
        out.total = out.pixel + wt.mu * out.sc + wt.gamma * out.s1;
        Ok((out, grad))
    }
}

/// Total loss for a single image: `pixel + mu * sc + gamma * s1`.
pub fn total_loss(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, weights: &LossWeights, featnet: &FeatureNet) -> Result<LossBreakdown> {
    check_shape(&pred, gt)?;
    let loss = StructuralLoss::with_featnet(weights.clone(), featnet.clone())?;
    loss.evaluate(&pred.to_owned().insert_axis(Axis(0)), std::slice::from_ref(gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn mask(v: Array2<u8>) -> GroundTruthMask {
        GroundTruthMask::new(v).unwrap()
    }

    #[test]
    fn bce_hand_example() {
        let gt = mask(array![[1], [0]]);
        let pred = array![[0.9], [0.2]];
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((bce_loss(pred.view(), &gt).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.16425).abs() < 1e-5);
    }

    #[test]
    fn bce_uniform_prediction_is_log2() {
        let gt = mask(array![[1, 0, 0], [1, 1, 0]]);
        let pred = Array2::from_elem((2, 3), 0.5);
        assert!((bce_loss(pred.view(), &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_perfect_prediction_bound() {
        let gt = mask(array![[1, 0], [0, 1]]);
        let pred = gt.to_real();
        assert!(bce_loss(pred.view(), &gt).unwrap() <= -(1.0 - P_MIN).ln() + 1e-18);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let gt = mask(array![[1, 0]]);
        let pred = array![[0.5], [0.5]];
        assert!(matches!(bce_loss(pred.view(), &gt), Err(Error::ShapeMismatch { .. })));
        assert!(smooth_l1_loss(pred.view(), &gt, 0.5).is_err());
    }

    #[test]
    fn non_binary_mask_rejected() {
        assert!(GroundTruthMask::new(array![[0, 2]]).is_err());
    }

    #[test]
    fn weighted_bce_paper_literal_oracle() {
        let gt = mask(array![[1, 0, 0, 0]]);
        let pred = array![[0.9, 0.1, 0.1, 0.1]];
        // term by term: beta = 1/4 on the positive pixel, 3/4 on each negative
        let beta = 0.25;
        let mut sum = 0.0;
        for (p, y) in [(0.9f64, 1), (0.1, 0), (0.1, 0), (0.1, 0)] {
            sum += if y == 1 { -beta * p.ln() } else { -(1.0 - beta) * (1.0 - p).ln() };
        }
        let expected = sum / 4.0;
        let got = weighted_bce_loss(pred.view(), &gt, BetaConvention::PaperLiteral).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        // the complement convention swaps the weights
        let comp = weighted_bce_loss(pred.view(), &gt, BetaConvention::Complement).unwrap();
        let expected_c = (-0.75 * 0.9f64.ln() - 0.25 * 3.0 * 0.9f64.ln()) / 4.0;
        assert!((comp - expected_c).abs() < 1e-15);
    }

    #[test]
    fn weighted_bce_single_class_falls_back() {
        let gt = mask(Array2::zeros((3, 3)));
        let pred = Array2::from_shape_fn((3, 3), |(i, j)| 0.1 * (i + j) as f64 + 0.05);
        for conv in [BetaConvention::PaperLiteral, BetaConvention::Complement] {
            assert_eq!(
                weighted_bce_loss(pred.view(), &gt, conv).unwrap(),
                bce_loss(pred.view(), &gt).unwrap()
            );
        }
    }

    #[test]
    fn smooth_l1_examples() {
        let gt = mask(array![[1, 0], [0, 1]]);
        assert_eq!(smooth_l1_loss(gt.to_real().view(), &gt, 0.5).unwrap(), 0.0);
        assert_eq!(smooth_l1(0.5, 0.5), 0.125);
        assert_eq!(0.5 * 0.5 * 0.5, 0.125);
        let inverted = gt.inverted().to_real();
        assert!((smooth_l1_loss(inverted.view(), &gt, 0.5).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn sc_loss_examples() {
        let gt = mask(array![[1, 0], [0, 0]]);
        let net = FeatureNet::seeded(1);
        assert_eq!(sc_loss(gt.to_real().view(), &gt, &net, &[1.0; 3]).unwrap(), 0.0);
        let pred = array![[0.2, 0.7], [0.4, 0.1]];
        assert_eq!(sc_loss(pred.view(), &gt, &net, &[0.0; 3]).unwrap(), 0.0);
        let mut one_off = gt.to_real();
        one_off[[1, 1]] = 0.3;
        let v = sc_loss(one_off.view(), &gt, &FeatureNet::identity(), &[1.0]).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn lambda_length_must_match_featnet() {
        let gt = mask(array![[1, 0]]);
        let pred = array![[0.5, 0.5]];
        assert!(sc_loss(pred.view(), &gt, &FeatureNet::seeded(0), &[1.0]).is_err());
    }

    #[test]
    fn total_with_zero_mu_gamma_is_weighted_bce() {
        let gt = mask(array![[1, 0, 0], [1, 0, 0], [0, 0, 0]]);
        let pred = Array2::from_shape_fn((3, 3), |(i, j)| 0.08 * (i * 3 + j) as f64 + 0.1);
        let w = LossWeights {
            mu: 0.0,
            gamma: 0.0,
            ..LossWeights::default()
        };
        let b = total_loss(pred.view(), &gt, &w, &FeatureNet::seeded(0)).unwrap();
        assert_eq!(b.total, weighted_bce_loss(pred.view(), &gt, BetaConvention::Complement).unwrap());
    }

    #[test]
    fn perfect_prediction_only_keeps_pixel_floor() {
        let gt = mask(array![[1, 0, 0, 1], [0, 0, 1, 0]]);
        let b = total_loss(gt.to_real().view(), &gt, &LossWeights::default(), &FeatureNet::seeded(0)).unwrap();
        assert_eq!(b.sc, 0.0);
        assert_eq!(b.s1, 0.0);
        assert_eq!(b.total, b.pixel);
        assert!(b.pixel <= -(1.0 - P_MIN).ln() + 1e-18);
    }

    fn arb_instance(h: usize, w: usize) -> impl Strategy<Value = (Array2<f64>, GroundTruthMask)> {
        (
            proptest::collection::vec(0.0f64..=1.0, h * w),
            proptest::collection::vec(0u8..=1, h * w),
        )
            .prop_map(move |(p, g)| {
                (
                    Array2::from_shape_vec((h, w), p).unwrap(),
                    GroundTruthMask::new(Array2::from_shape_vec((h, w), g).unwrap()).unwrap(),
                )
            })
    }

    proptest! {
        #[test]
        fn every_term_is_nonnegative((pred, gt) in arb_instance(6, 6)) {
            let b = total_loss(pred.view(), &gt, &LossWeights::default(), &FeatureNet::seeded(2)).unwrap();
            prop_assert!(b.pixel >= 0.0 && b.sc >= 0.0 && b.s1 >= 0.0 && b.total >= 0.0);
            prop_assert!(bce_loss(pred.view(), &gt).unwrap() >= 0.0);
        }

        #[test]
        fn sc_loss_is_symmetric(a in proptest::collection::vec(0u8..=1, 64), b in proptest::collection::vec(0u8..=1, 64)) {
            let ga = GroundTruthMask::new(Array2::from_shape_vec((8, 8), a).unwrap()).unwrap();
            let gb = GroundTruthMask::new(Array2::from_shape_vec((8, 8), b).unwrap()).unwrap();
            let net = FeatureNet::seeded(5);
            let ab = sc_loss(ga.to_real().view(), &gb, &net, &[1.0; 3]).unwrap();
            let ba = sc_loss(gb.to_real().view(), &ga, &net, &[1.0; 3]).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn smooth_l1_is_monotone_in_abs_difference(
            (pred, gt) in arb_instance(4, 4),
            idx in 0usize..16,
            step in 0.0f64..0.5,
        ) {
            let eps = 0.5;
            let base = smooth_l1_loss(pred.view(), &gt, eps).unwrap();
            let mut moved = pred.clone();
            let (i, j) = (idx / 4, idx % 4);
            let y = f64::from(gt.values()[[i, j]]);
            let d = y - moved[[i, j]];
            // push the prediction further from the target
            moved[[i, j]] = y - (d.abs() + step) * if d < 0.0 { -1.0 } else { 1.0 };
            prop_assert!(smooth_l1_loss(moved.view(), &gt, eps).unwrap() >= base);
        }

        #[test]
        fn conventions_agree_on_balanced_masks(p in proptest::collection::vec(0.0f64..=1.0, 8), perm in Just(()).prop_perturb(|_, mut rng| {
            let mut v = vec![1u8, 1, 1, 1, 0, 0, 0, 0];
            for i in (1..v.len()).rev() {
                let j = (rng.next_u32() as usize) % (i + 1);
                v.swap(i, j);
            }
            v
        })) {
            let gt = GroundTruthMask::new(Array2::from_shape_vec((2, 4), perm).unwrap()).unwrap();
            let pred = Array2::from_shape_vec((2, 4), p).unwrap();
            let a = weighted_bce_loss(pred.view(), &gt, BetaConvention::PaperLiteral).unwrap();
            let b = weighted_bce_loss(pred.view(), &gt, BetaConvention::Complement).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((a - 0.5 * bce_loss(pred.view(), &gt).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn zeroing_one_weight_removes_exactly_that_term((pred, gt) in arb_instance(5, 5)) {
            let net = FeatureNet::seeded(3);
            let full = total_loss(pred.view(), &gt, &LossWeights::default(), &net).unwrap();
            let no_sc = total_loss(pred.view(), &gt, &LossWeights { mu: 0.0, ..LossWeights::default() }, &net).unwrap();
            let no_s1 = total_loss(pred.view(), &gt, &LossWeights { gamma: 0.0, ..LossWeights::default() }, &net).unwrap();
            prop_assert_eq!((no_sc.pixel, no_sc.sc, no_sc.s1), (full.pixel, full.sc, full.s1));
            prop_assert!((no_sc.total - (full.pixel + 20.0 * full.s1)).abs() < 1e-12);
            prop_assert!((no_s1.total - (full.pixel + 0.01 * full.sc)).abs() < 1e-12);
        }
    }
}
