use ndarray::{concatenate, s, Array2, Array3, Array4, Axis};

use super::config::{FusionMode, SfcnConfig, OUTPUT_CLASSES};
use super::params::{up_geometry, BnState, Gradients, SfcnParams};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache, BatchStats, ConvGeometry};
use crate::reflection::{ImageTensor, ReciprocalPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Origin,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics of the active branch are updated.
    Train,
    /// Running statistics; no state changes.
    Eval,
}

/// Per-level encoder outputs `g_l`, each `[N, C_l, H/2^l, W/2^l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub levels: Vec<Array4<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// Foreground probability per pixel, `[H, W]`.
    pub probabilities: Array2<f64>,
    /// Raw two-filter output, `[2, H, W]` (background, foreground).
    pub logits: Array3<f64>,
}

impl SaliencyMap {
    /// Per-pixel softmax over both filters, `[2, H, W]`.
    pub fn softmax(&self) -> Array3<f64> {
        let mut out = self.logits.clone();
        let (_, h, w) = out.dim();
        for y in 0..h {
            for x in 0..w {
                let (a, b) = (self.logits[[0, y, x]], self.logits[[1, y, x]]);
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                out[[0, y, x]] = ea / (ea + eb);
                out[[1, y, x]] = eb / (ea + eb);
            }
        }
        out
    }
}

/// Stacks images into a `[N, 3, H, W]` batch.
pub fn stack_images<'a, I>(images: I) -> Result<Array4<f64>>
where
    I: IntoIterator<Item = &'a ImageTensor>,
{
    let views: Vec<_> = images.into_iter().map(|img| img.data.view().insert_axis(Axis(0))).collect();
    if views.is_empty() {
        return Err(Error::EmptyDataset);
    }
    concatenate(Axis(0), &views).map_err(|e| Error::shape("equal image sizes", e.to_string()))
}

struct BlockTrace {
    input: Array4<f64>,
    bn: BatchNormCache,
    batch_stats: bool,
    output: Array4<f64>,
}

struct BranchTrace {
    blocks: Vec<BlockTrace>,
    /// Argmax and input dims of the pool entering each level (`None` at level 0).
    pools: Vec<Option<(Vec<u32>, (usize, usize, usize, usize))>>,
}

struct FusionStepTrace {
    cat: Array4<f64>,
    /// Post-ReLU 1×1 output.
    squeezed: Array4<f64>,
}

struct Trace {
    origin: BranchTrace,
    reflect: BranchTrace,
    fusion: Vec<FusionStepTrace>,
    head_input: Array4<f64>,
    probs: Array3<f64>,
}

struct BranchOutput {
    features: FeatureStack,
    trace: Option<BranchTrace>,
    stats: Vec<BatchStats>,
}

struct FusionOutput {
    fused: Array4<f64>,
    steps: Vec<FusionStepTrace>,
    merges: u64,
}

fn bn_affine<'a>(params: &'a SfcnParams, config: &SfcnConfig, branch: Branch, layer: usize) -> &'a BnState {
    match branch {
        Branch::Reflect if !config.share_affine => &params.bn_reflect[layer],
        _ => &params.bn_origin[layer],
    }
}

fn bn_running(params: &SfcnParams, branch: Branch, layer: usize) -> &BnState {
    match branch {
        Branch::Origin => &params.bn_origin[layer],
        Branch::Reflect => &params.bn_reflect[layer],
    }
}

fn run_branch(
    params: &SfcnParams,
    config: &SfcnConfig,
    x: &Array4<f64>,
    branch: Branch,
    mode: Mode,
    record: bool,
) -> BranchOutput {
    let eps = config.bn_epsilon;
    let mut h = x.clone();
    let mut layer = 0;
    let mut levels = Vec::with_capacity(config.levels);
    let mut blocks = Vec::new();
    let mut pools = Vec::new();
    let mut stats = Vec::new();
    for level in 0..config.levels {
        if level > 0 {
            let dim = h.dim();
            let (pooled, arg) = ops::max_pool2(&h);
            h = pooled;
            pools.push(record.then_some((arg, dim)));
        } else {
            pools.push(None);
        }
        for _ in 0..config.convs_per_level[level] {
            let z = ops::conv2d(&h, &params.shared_convs[layer], None, ConvGeometry::SAME3);
            let affine = bn_affine(params, config, branch, layer);
            let (bn_out, cache) = match mode {
                Mode::Train => {
                    let (y, cache, st) = ops::batch_norm_train(&z, &affine.scale, &affine.shift, eps);
                    stats.push(st);
                    (y, Some(cache))
                }
                Mode::Eval => {
                    let run = bn_running(params, branch, layer);
                    let y = ops::batch_norm_eval(&z, &affine.scale, &affine.shift, &run.running_mean, &run.running_var, eps);
                    let cache = record.then(|| {
                        let inv_std = run.running_var.mapv(|v| 1.0 / (v + eps).sqrt());
                        let mut normalized = z.clone();
                        for c in 0..normalized.dim().1 {
                            let (m, is) = (run.running_mean[c], inv_std[c]);
                            normalized.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| (v - m) * is);
                        }
                        BatchNormCache { normalized, inv_std }
                    });
                    (y, cache)
                }
            };
            let out = ops::relu(bn_out);
            if record {
                blocks.push(BlockTrace {
                    input: h,
                    bn: cache.expect("cache recorded"),
                    batch_stats: mode == Mode::Train,
                    output: out.clone(),
                });
            }
            h = out;
            layer += 1;
        }
        levels.push(h.clone());
    }
    BranchOutput {
        features: FeatureStack { levels },
        trace: record.then_some(BranchTrace { blocks, pools }),
        stats,
    }
}

fn squeeze(params: &SfcnParams, level: usize, cat: &Array4<f64>) -> Array4<f64> {
    let c = &params.fusion[level].squeeze;
    ops::relu(ops::conv2d(cat, &c.weight, c.bias.as_ref(), ConvGeometry::POINTWISE))
}

fn upsample(params: &SfcnParams, config: &SfcnConfig, level: usize, x: &Array4<f64>) -> Array4<f64> {
    let up = params.fusion[level].up.as_ref().expect("level has an upsampler");
    ops::conv_transpose2d(x, &up.weight, up.bias.as_ref(), up_geometry(config, level))
}

fn cat(parts: &[&Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).expect("fusion inputs share N, H, W")
}

fn run_fusion(
    params: &SfcnParams,
    config: &SfcnConfig,
    origin: &FeatureStack,
    reflect: &FeatureStack,
    record: bool,
) -> Result<FusionOutput> {
    let l = config.levels;
    if origin.levels.len() != l || reflect.levels.len() != l {
        return Err(Error::shape(
            format!("{l} feature levels per branch"),
            (origin.levels.len(), reflect.levels.len()),
        ));
    }
    for (a, b) in origin.levels.iter().zip(&reflect.levels) {
        if a.dim() != b.dim() {
            return Err(Error::shape(a.dim(), b.dim()));
        }
    }
    let top = l - 1;
    let mut steps = Vec::new();
    let top_cat = cat(&[&origin.levels[top], &reflect.levels[top]]);
    let top_index = match config.fusion {
        FusionMode::ConcatOnly => 0,
        FusionMode::Hierarchical => top,
    };
    let mut f = squeeze(params, top_index, &top_cat);
    let mut merges = 0;
    match config.fusion {
        FusionMode::ConcatOnly => {
            if record {
                steps.push(FusionStepTrace {
                    cat: top_cat,
                    squeezed: f.clone(),
                });
            }
            f = upsample(params, config, 0, &f);
        }
        FusionMode::Hierarchical => {
            // steps are recorded top-down and reversed at the end
            if record {
                steps.push(FusionStepTrace {
                    cat: top_cat,
                    squeezed: f.clone(),
                });
            }
            for level in (0..top).rev() {
                let up = upsample(params, config, level + 1, &f);
                let c = cat(&[&origin.levels[level], &up, &reflect.levels[level]]);
                f = squeeze(params, level, &c);
                merges += 1;
                if record {
                    steps.push(FusionStepTrace {
                        cat: c,
                        squeezed: f.clone(),
                    });
                }
            }
            steps.reverse();
        }
    }
    Ok(FusionOutput { fused: f, steps, merges })
}

/// Foreground softmax probability from the two logits.
fn foreground_probs(logits: &Array4<f64>) -> Array3<f64> {
    let z0 = logits.index_axis(Axis(1), 0);
    let z1 = logits.index_axis(Axis(1), 1);
    let mut p = Array3::zeros(z0.dim());
    ndarray::Zip::from(&mut p).and(&z0).and(&z1).for_each(|p, &a, &b| {
        *p = 1.0 / (1.0 + (a - b).exp());
    });
    p
}

/// Which branches gradients are propagated into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientScope {
    Both,
    Only(Branch),
}

/// Weight-shared twin-branch FCN with per-branch BN state.
pub struct Sfcn {
    config: SfcnConfig,
    params: SfcnParams,
    trace: Option<Trace>,
    merges: u64,
}

impl Sfcn {
    pub fn new(config: SfcnConfig, seed: u64) -> Result<Self> {
        let params = SfcnParams::init(&config, seed)?;
        Ok(Self::from_parts(config, params))
    }

    /// Wraps existing parameters. Shapes are trusted to match `config`.
    pub fn from_parts(config: SfcnConfig, params: SfcnParams) -> Self {
        Self {
            config,
            params,
            trace: None,
            merges: 0,
        }
    }

    pub fn config(&self) -> &SfcnConfig {
        &self.config
    }

    pub fn params(&self) -> &SfcnParams {
        &self.params
    }

    /// Mutable access drops any recorded forward pass.
    pub fn params_mut(&mut self) -> &mut SfcnParams {
        self.trace = None;
        &mut self.params
    }

    pub fn into_params(self) -> SfcnParams {
        self.params
    }

    /// How many times a coarser fused map has been merged into a finer
    /// level, summed over all forward passes.
    pub fn hierarchical_merges(&self) -> u64 {
        self.merges
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let [h, w] = self.config.input_size;
        let (n, c, xh, xw) = x.dim();
        if n == 0 || c != 3 || xh != h || xw != w {
            return Err(Error::shape(format!("[N>0, 3, {h}, {w}]"), x.dim()));
        }
        Ok(())
    }

    fn apply_stats(&mut self, branch: Branch, stats: Vec<BatchStats>) {
        let m = self.config.bn_momentum;
        let bns = match branch {
            Branch::Origin => &mut self.params.bn_origin,
            Branch::Reflect => &mut self.params.bn_reflect,
        };
        for (bn, st) in bns.iter_mut().zip(stats) {
            let unbias = st.count as f64 / (st.count.max(2) - 1) as f64;
            bn.running_mean.zip_mut_with(&st.mean, |r, &b| *r = (1.0 - m) * *r + m * b);
            bn.running_var.zip_mut_with(&st.var, |r, &b| *r = (1.0 - m) * *r + m * b * unbias);
        }
    }

    /// Runs one sibling branch on a `[N, 3, H, W]` batch.
    pub fn branch_forward(&mut self, x: &Array4<f64>, branch: Branch, mode: Mode) -> Result<FeatureStack> {
        self.check_input(x)?;
        let out = run_branch(&self.params, &self.config, x, branch, mode, false);
        if mode == Mode::Train {
            self.trace = None;
            self.apply_stats(branch, out.stats);
        }
        Ok(out.features)
    }

    /// Fused full-resolution map `f_1`.
    pub fn fuse(&mut self, origin: &FeatureStack, reflect: &FeatureStack) -> Result<Array4<f64>> {
        let out = run_fusion(&self.params, &self.config, origin, reflect, false)?;
        self.merges += out.merges;
        Ok(out.fused)
    }

    pub fn forward(&mut self, pairs: &[ReciprocalPair], mode: Mode) -> Result<Vec<SaliencyMap>> {
        self.run(pairs, mode, false)
    }

    /// Forward pass that keeps what [`Sfcn::backward`] needs.
    pub fn forward_recorded(&mut self, pairs: &[ReciprocalPair], mode: Mode) -> Result<Vec<SaliencyMap>> {
        self.run(pairs, mode, true)
    }

    fn run(&mut self, pairs: &[ReciprocalPair], mode: Mode, record: bool) -> Result<Vec<SaliencyMap>> {
        let xo = stack_images(pairs.iter().map(|p| &p.origin))?;
        let xr = stack_images(pairs.iter().map(|p| &p.reflected))?;
        self.check_input(&xo)?;
        self.check_input(&xr)?;
        self.trace = None;
        let o = run_branch(&self.params, &self.config, &xo, Branch::Origin, mode, record);
        let r = run_branch(&self.params, &self.config, &xr, Branch::Reflect, mode, record);
        let fusion = run_fusion(&self.params, &self.config, &o.features, &r.features, record)?;
        self.merges += fusion.merges;
        let head = &self.params.head;
        let logits = ops::conv2d(&fusion.fused, &head.weight, head.bias.as_ref(), ConvGeometry::SAME3);
        let probs = foreground_probs(&logits);
        let maps = (0..pairs.len())
            .map(|n| SaliencyMap {
                probabilities: probs.index_axis(Axis(0), n).to_owned(),
                logits: logits.index_axis(Axis(0), n).to_owned(),
            })
            .collect();
        if mode == Mode::Train {
            self.apply_stats(Branch::Origin, o.stats);
            self.apply_stats(Branch::Reflect, r.stats);
        }
        if record {
            self.trace = Some(Trace {
                origin: o.trace.expect("recorded"),
                reflect: r.trace.expect("recorded"),
                fusion: fusion.steps,
                head_input: fusion.fused,
                probs,
            });
        }
        Ok(maps)
    }

    /// Gradients of a scalar loss with respect to every trainable tensor,
    /// given `dL/dp` for the foreground probabilities (`[N, H, W]`).
    pub fn backward(&self, dprob: &Array3<f64>) -> Result<Gradients> {
        self.backward_scoped(dprob, GradientScope::Both)
    }

    /// As [`Sfcn::backward`], optionally treating one branch as frozen.
    pub fn backward_scoped(&self, dprob: &Array3<f64>, scope: GradientScope) -> Result<Gradients> {
        let trace = self.trace.as_ref().ok_or(Error::NoRecordedForward)?;
        if dprob.dim() != trace.probs.dim() {
            return Err(Error::shape(trace.probs.dim(), dprob.dim()));
        }
        let config = &self.config;
        let params = &self.params;
        let mut grads = params.zeros_like();

        // softmax foreground channel: dp/dz1 = p(1-p) = -dp/dz0
        let (n, h, w) = dprob.dim();
        let mut dlogits = Array4::zeros((n, OUTPUT_CLASSES, h, w));
        for ((i, y, x), &d) in dprob.indexed_iter() {
            let p = trace.probs[[i, y, x]];
            let g = d * p * (1.0 - p);
            dlogits[[i, 0, y, x]] = -g;
            dlogits[[i, 1, y, x]] = g;
        }
        let head = ops::conv2d_backward(&trace.head_input, &params.head.weight, &dlogits, ConvGeometry::SAME3, true);
        grads.head.weight = head.weight;
        grads.head.bias = Some(head.bias);
        let dfused = head.input.expect("input grad");

        let top = config.levels - 1;
        let mut dg_origin: Vec<Option<Array4<f64>>> = vec![None; config.levels];
        let mut dg_reflect: Vec<Option<Array4<f64>>> = vec![None; config.levels];
        let ch = &config.channels_per_level;

        match config.fusion {
            FusionMode::ConcatOnly => {
                let step = &trace.fusion[0];
                let up = params.fusion[0].up.as_ref().expect("upsampler");
                let ug = ops::conv_transpose2d_backward(&step.squeezed, &up.weight, &dfused, up_geometry(config, 0), true);
                let gu = grads.fusion[0].up.as_mut().expect("upsampler");
                gu.weight = ug.weight;
                gu.bias = Some(ug.bias);
                let ds = ops::relu_backward(&ug.input.expect("input grad"), &step.squeezed);
                let sq = &params.fusion[0].squeeze;
                let sg = ops::conv2d_backward(&step.cat, &sq.weight, &ds, ConvGeometry::POINTWISE, true);
                grads.fusion[0].squeeze.weight = sg.weight;
                grads.fusion[0].squeeze.bias = Some(sg.bias);
                let dcat = sg.input.expect("input grad");
                dg_origin[top] = Some(dcat.slice(s![.., ..ch[top], .., ..]).to_owned());
                dg_reflect[top] = Some(dcat.slice(s![.., ch[top].., .., ..]).to_owned());
            }
            FusionMode::Hierarchical => {
                let mut df = dfused;
                for level in 0..=top {
                    let step = &trace.fusion[level];
                    let ds = ops::relu_backward(&df, &step.squeezed);
                    let sq = &params.fusion[level].squeeze;
                    let sg = ops::conv2d_backward(&step.cat, &sq.weight, &ds, ConvGeometry::POINTWISE, true);
                    grads.fusion[level].squeeze.weight = sg.weight;
                    grads.fusion[level].squeeze.bias = Some(sg.bias);
                    let dcat = sg.input.expect("input grad");
                    let c = ch[level];
                    dg_origin[level] = Some(dcat.slice(s![.., ..c, .., ..]).to_owned());
                    if level == top {
                        dg_reflect[level] = Some(dcat.slice(s![.., c.., .., ..]).to_owned());
                        break;
                    }
                    let cu = ch[level + 1];
                    dg_reflect[level] = Some(dcat.slice(s![.., c + cu.., .., ..]).to_owned());
                    let dup = dcat.slice(s![.., c..c + cu, .., ..]).to_owned();
                    let coarse = &trace.fusion[level + 1].squeezed;
                    let up = params.fusion[level + 1].up.as_ref().expect("upsampler");
                    let ug = ops::conv_transpose2d_backward(coarse, &up.weight, &dup, up_geometry(config, level + 1), true);
                    let gu = grads.fusion[level + 1].up.as_mut().expect("upsampler");
                    gu.weight = ug.weight;
                    gu.bias = Some(ug.bias);
                    df = ug.input.expect("input grad");
                }
            }
        }

        for (branch, t, dg) in [
            (Branch::Origin, &trace.origin, dg_origin),
            (Branch::Reflect, &trace.reflect, dg_reflect),
        ] {
            if scope == GradientScope::Only(other(branch)) {
                continue;
            }
            backward_branch(params, config, branch, t, dg, &mut grads);
        }
        Ok(grads)
    }
}

fn other(b: Branch) -> Branch {
    match b {
        Branch::Origin => Branch::Reflect,
        Branch::Reflect => Branch::Origin,
    }
}

fn backward_branch(
    params: &SfcnParams,
    config: &SfcnConfig,
    branch: Branch,
    trace: &BranchTrace,
    mut dg: Vec<Option<Array4<f64>>>,
    grads: &mut Gradients,
) {
    let layer_levels = config.layer_levels();
    let mut layer = layer_levels.len();
    let mut carry: Option<Array4<f64>> = None;
    for level in (0..config.levels).rev() {
        let mut dh = match (dg[level].take(), carry.take()) {
            (Some(a), Some(b)) => a + b,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => {
                layer -= config.convs_per_level[level];
                continue;
            }
        };
        for _ in 0..config.convs_per_level[level] {
            layer -= 1;
            let block = &trace.blocks[layer];
            let dz = ops::relu_backward(&dh, &block.output);
            let affine = bn_affine(params, config, branch, layer);
            let (dconv, dscale, dshift) = if block.batch_stats {
                let g = ops::batch_norm_backward(&dz, &block.bn, &affine.scale);
                (g.input, g.gamma, g.beta)
            } else {
                let mut dx = dz.clone();
                let mut dscale = ndarray::Array1::zeros(affine.scale.len());
                for c in 0..dx.dim().1 {
                    let k = affine.scale[c] * block.bn.inv_std[c];
                    dscale[c] = ndarray::Zip::from(dz.slice(s![.., c, .., ..]))
                        .and(block.bn.normalized.slice(s![.., c, .., ..]))
                        .fold(0.0, |acc, &a, &b| acc + a * b);
                    dx.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| v * k);
                }
                let dshift = ops::channel_sum(&dz);
                (dx, dscale, dshift)
            };
            let target = match branch {
                Branch::Reflect if !config.share_affine => &mut grads.bn_reflect[layer],
                _ => &mut grads.bn_origin[layer],
            };
            target.scale += &dscale;
            target.shift += &dshift;
            let need_input = layer > 0;
            let cg = ops::conv2d_backward(&block.input, &params.shared_convs[layer], &dconv, ConvGeometry::SAME3, need_input);
            grads.shared_convs[layer] += &cg.weight;
            if let Some(dx) = cg.input {
                dh = dx;
            }
        }
        if let Some((arg, dim)) = &trace.pools[level] {
            carry = Some(ops::max_pool2_backward(&dh, arg, *dim));
        }
    }
}
