//! Saliency evaluation: PR curves, F-measure, MAE and S-measure.

use std::path::Path;

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;

pub const ETA_SQ: f64 = 0.3;
pub const S_LAMBDA: f64 = 0.5;
pub const LEVELS: usize = 256;

/// Threshold `k` of the sweep, `k / 255`.
pub fn threshold(k: usize) -> f64 {
    k as f64 / (LEVELS - 1) as f64
}

fn check_shape(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(gt.dim(), pred.dim()));
    }
    Ok(())
}

/// Precision and recall of `pred >= threshold` against `gt`.
///
/// Precision is 1 when nothing is predicted positive; recall is 1 when the
/// ground truth is empty.
pub fn precision_recall(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, threshold: f64) -> Result<(f64, f64)> {
    check_shape(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt.values()) {
        match (p >= threshold, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(ratios(tp, fp, fn_))
}

fn ratios(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

/// `(1 + η²) P R / (η² P + R)`, zero when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, eta_sq: f64) -> f64 {
    let den = eta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + eta_sq) * precision * recall / den
    }
}

pub fn mae(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<f64> {
    check_shape(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt.values()).map(|(&p, &g)| (p - f64::from(g)).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Precision and recall at all 256 thresholds of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    /// Largest F over the sweep and the threshold attaining it.
    pub fn max_f(&self, eta_sq: f64) -> (f64, f64) {
        self.precision
            .iter()
            .zip(&self.recall)
            .zip(&self.thresholds)
            .map(|((&p, &r), &t)| (f_measure(p, r, eta_sq), t))
            .fold((f64::NEG_INFINITY, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best })
    }

    /// Pointwise mean of several curves.
    pub fn mean<'a>(curves: impl IntoIterator<Item = &'a PrCurve>) -> Result<PrCurve> {
        let mut precision = vec![0.0; LEVELS];
        let mut recall = vec![0.0; LEVELS];
        let mut n = 0usize;
        for c in curves {
            for k in 0..LEVELS {
                precision[k] += c.precision[k];
                recall[k] += c.recall[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        precision.iter_mut().chain(recall.iter_mut()).for_each(|v| *v /= n as f64);
        Ok(PrCurve {
            thresholds: (0..LEVELS).map(threshold).collect(),
            precision,
            recall,
        })
    }
}

/// Number of sweep thresholds that `v` reaches, minus one.
fn level_index(v: f64) -> Option<usize> {
    let mut k = (v * (LEVELS - 1) as f64).floor().clamp(-1.0, (LEVELS - 1) as f64) as isize;
    while k + 1 < LEVELS as isize && v >= threshold((k + 1) as usize) {
        k += 1;
    }
    while k >= 0 && v < threshold(k as usize) {
        k -= 1;
    }
    (k >= 0).then_some(k as usize)
}

/// Per-image PR curve, equal to `precision_recall` at every threshold.
pub fn pr_curve(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<PrCurve> {
    check_shape(pred, gt)?;
    let mut fg = [0usize; LEVELS];
    let mut bg = [0usize; LEVELS];
    for (&p, &g) in pred.iter().zip(gt.values()) {
        if let Some(k) = level_index(p) {
            if g == 1 {
                fg[k] += 1;
            } else {
                bg[k] += 1;
            }
        }
    }
    let positives = gt.foreground();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = vec![0.0; LEVELS];
    let mut recall = vec![0.0; LEVELS];
    for k in (0..LEVELS).rev() {
        tp += fg[k];
        fp += bg[k];
        (precision[k], recall[k]) = ratios(tp, fp, positives - tp);
    }
    Ok(PrCurve {
        thresholds: (0..LEVELS).map(threshold).collect(),
        precision,
        recall,
    })
}

/// Twice the mean saliency, capped at 1.
pub fn adaptive_threshold(pred: ArrayView2<'_, f64>) -> f64 {
    (2.0 * pred.mean().unwrap_or(0.0)).min(1.0)
}

pub fn adaptive_f(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, eta_sq: f64) -> Result<f64> {
    let (p, r) = precision_recall(pred, gt, adaptive_threshold(pred))?;
    Ok(f_measure(p, r, eta_sq))
}

const EPS: f64 = f64::EPSILON;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

/// Object-aware structural similarity.
pub fn s_object(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<f64> {
    check_shape(pred, gt)?;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.iter().zip(gt.values()) {
        if g == 1 {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / pred.len() as f64;
    let o_fg = if fg.is_empty() { 0.0 } else { object_score(&fg) };
    let o_bg = if bg.is_empty() { 0.0 } else { object_score(&bg) };
    Ok(u * o_fg + (1.0 - u) * o_bg)
}

fn block_ssim(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>) -> f64 {
    let n = pred.len() as f64;
    let x = pred.sum() / n;
    let y = gt.sum() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let den = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / den, syy / den, sxy / den);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Rounded ground-truth centroid as split counts `(rows above, columns left)`.
fn centroid_split(gt: &GroundTruthMask) -> (usize, usize) {
    let (h, w) = gt.dim();
    let total = gt.foreground();
    if total == 0 {
        return ((h as f64 / 2.0).round() as usize, (w as f64 / 2.0).round() as usize);
    }
    let (mut sy, mut sx) = (0.0, 0.0);
    for ((i, j), &g) in gt.values().indexed_iter() {
        if g == 1 {
            sy += (i + 1) as f64;
            sx += (j + 1) as f64;
        }
    }
    ((sy / total as f64).round() as usize, (sx / total as f64).round() as usize)
}

/// Region-aware structural similarity: four blocks split at the centroid,
/// weighted by block area.
pub fn s_region(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask) -> Result<f64> {
    check_shape(pred, gt)?;
    let (h, w) = gt.dim();
    let (cy, cx) = centroid_split(gt);
    let g = gt.to_real();
    let area = (h * w) as f64;
    let blocks = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    let mut q = 0.0;
    for (rows, cols) in blocks {
        let weight = (rows.len() * cols.len()) as f64 / area;
        if weight == 0.0 {
            continue;
        }
        let sl = s![rows, cols];
        q += weight * block_ssim(pred.slice(sl), g.slice(sl));
    }
    Ok(q)
}

/// `λ S_o + (1 - λ) S_r`, clamped to `[0, 1]`. An all-background mask scores
/// `1 - mean(pred)`, an all-foreground mask `mean(pred)`.
pub fn s_measure(pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, lambda: f64) -> Result<f64> {
    check_shape(pred, gt)?;
    let fg = gt.foreground();
    let mean = pred.mean().unwrap_or(0.0);
    let q = if fg == 0 {
        1.0 - mean
    } else if fg == gt.len() {
        mean
    } else {
        lambda * s_object(pred, gt)? + (1.0 - lambda) * s_region(pred, gt)?
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Which F-measure the report headlines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FPolicy {
    #[default]
    Max,
    Adaptive,
}

impl std::str::FromStr for FPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(FPolicy::Max),
            "adaptive" => Ok(FPolicy::Adaptive),
            other => Err(Error::Config(format!("unknown F policy `{other}` (expected max or adaptive)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub eta_sq: f64,
    pub lambda: f64,
    pub policy: FPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            eta_sq: ETA_SQ,
            lambda: S_LAMBDA,
            policy: FPolicy::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub fmax: f64,
    pub fadaptive: f64,
    pub mae: f64,
    pub smeasure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub options: EvalOptions,
    /// Headline F under `options.policy`.
    pub f_measure: f64,
    /// Max F of the mean PR curve.
    pub fmax: f64,
    pub fadaptive: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub pr: PrCurve,
    pub per_image: Vec<ImageMetrics>,
    /// Stems present in only one of the two directories.
    pub skipped: Vec<String>,
}

pub struct Evaluated {
    pub metrics: ImageMetrics,
    pub curve: PrCurve,
}

pub fn evaluate_image(name: &str, pred: ArrayView2<'_, f64>, gt: &GroundTruthMask, options: &EvalOptions) -> Result<Evaluated> {
    let curve = pr_curve(pred, gt)?;
    Ok(Evaluated {
        metrics: ImageMetrics {
            name: name.to_owned(),
            fmax: curve.max_f(options.eta_sq).0,
            fadaptive: adaptive_f(pred, gt, options.eta_sq)?,
            mae: mae(pred, gt)?,
            smeasure: s_measure(pred, gt, options.lambda)?,
        },
        curve,
    })
}

/// Aggregates per-image results in the given order.
pub fn aggregate(results: Vec<Evaluated>, options: EvalOptions, skipped: Vec<String>) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::NoMatchedPairs);
    }
    let pr = PrCurve::mean(results.iter().map(|r| &r.curve))?;
    let n = results.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| results.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let fadaptive = mean(|m| m.fadaptive);
    let mae = mean(|m| m.mae);
    let s_measure = mean(|m| m.smeasure);
    let fmax = pr.max_f(options.eta_sq).0;
    Ok(MetricReport {
        options,
        f_measure: match options.policy {
            FPolicy::Max => fmax,
            FPolicy::Adaptive => fadaptive,
        },
        fmax,
        fadaptive,
        mae,
        s_measure,
        pr,
        per_image: results.into_iter().map(|r| r.metrics).collect(),
        skipped,
    })
}

/// Evaluates in-memory `(name, prediction, ground truth)` triples.
pub fn evaluate_maps<'a, I>(items: I, options: EvalOptions) -> Result<MetricReport>
where
    I: IntoIterator<Item = (&'a str, ArrayView2<'a, f64>, &'a GroundTruthMask)>,
{
    let results = items
        .into_iter()
        .map(|(name, pred, gt)| evaluate_image(name, pred, gt, &options))
        .collect::<Result<Vec<_>>>()?;
    aggregate(results, options, Vec::new())
}

/// Evaluates every PNG stem present in both directories, in sorted order.
/// Predictions are scaled by 1/255; ground truth is foreground at `>= 128`.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, options: EvalOptions) -> Result<MetricReport> {
    let preds = data::png_stems(pred_dir)?;
    let gts = data::png_stems(gt_dir)?;
    let matched: Vec<&String> = preds.iter().filter(|s| gts.contains(*s)).collect();
    let skipped: Vec<String> = preds
        .symmetric_difference(&gts)
        .cloned()
        .collect();
    for stem in &skipped {
        log::warn!("no counterpart for `{stem}`, skipped");
    }
    let job = |stem: &&String| -> Result<Evaluated> {
        let pred = data::read_gray(&pred_dir.join(format!("{stem}.png")))?;
        let gt = data::read_mask(&gt_dir.join(format!("{stem}.png")))?;
        evaluate_image(stem, pred.view(), &gt, &options)
    };
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        matched.par_iter().map(job).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results = matched.iter().map(job).collect::<Result<Vec<_>>>()?;
    aggregate(results, options, skipped)
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Csv(e.to_string())
}

/// Per-image rows followed by a `MEAN` row. The mean `fmax` is the max F of
/// the mean PR curve; other columns are plain means.
pub fn write_report_csv(report: &MetricReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["name", "fmax", "fadaptive", "mae", "smeasure"]).map_err(csv_err)?;
    let rows = report.per_image.iter().map(|m| (m.name.as_str(), m.fmax, m.fadaptive, m.mae, m.smeasure));
    let mean = ("MEAN", report.fmax, report.fadaptive, report.mae, report.s_measure);
    for (name, a, b, c, d) in rows.chain(std::iter::once(mean)) {
        w.write_record([name.to_owned(), a.to_string(), b.to_string(), c.to_string(), d.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pr_csv(curve: &PrCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["threshold", "precision", "recall"]).map_err(csv_err)?;
    for k in 0..curve.thresholds.len() {
        w.write_record([curve.thresholds[k].to_string(), curve.precision[k].to_string(), curve.recall[k].to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pr_csv(path: &Path) -> Result<PrCurve> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut curve = PrCurve {
        thresholds: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
    };
    for record in r.deserialize::<(f64, f64, f64)>() {
        let (t, p, rc) = record.map_err(csv_err)?;
        curve.thresholds.push(t);
        curve.precision.push(p);
        curve.recall.push(rc);
    }
    if curve.thresholds.is_empty() {
        return Err(Error::Csv(format!("{}: no rows", path.display())));
    }
    Ok(curve)
}
