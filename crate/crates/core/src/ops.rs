//! Tensor primitives with hand-written backward passes.
//!
//! All feature maps are `[N, C, H, W]` in standard (row-major) layout.
//! Convolutions are lowered to one matrix product per image via im2col.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// 3×3, stride 1, "same" padding.
    pub const SAME3: Self = Self::new(3, 1, 1);
    pub const POINTWISE: Self = Self::new(1, 1, 0);

    /// Transposed-conv geometry that upsamples by exactly `factor` (even or 1).
    pub fn upsampler(factor: usize) -> Self {
        Self::new(2 * factor, factor, factor / 2)
    }

    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn transposed_out_len(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

fn contiguous(x: ArrayView4<'_, f64>) -> std::borrow::Cow<'_, [f64]> {
    match x.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(x.iter().copied().collect()),
    }
}

/// Range of output columns `ox` whose input column `ox*stride + kj - pad`
/// lies inside `[0, w)`.
fn valid_range(g: ConvGeometry, kj: usize, w: usize, wo: usize) -> (usize, usize) {
    let s = g.stride as isize;
    let off = kj as isize - g.pad as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = ((w as isize - 1 - off).div_euclid(s) + 1).clamp(0, wo as isize);
    (lo.min(hi) as usize, hi as usize)
}

/// Unfolds one `[c, h, w]` plane stack into a `[c·k·k, ho·wo]` patch matrix.
fn im2col(x: &[f64], (c, h, w): (usize, usize, usize), g: ConvGeometry, ho: usize, wo: usize, out: &mut [f64]) {
    let k = g.kernel;
    let ncols = ho * wo;
    out.fill(0.0);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_buf = &mut out[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_range(g, kj, w, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row_buf[oy * wo..(oy + 1) * wo];
                    let ix0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src_row[ix0..ix0 + hi - lo]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src_row[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix onto a `[c, h, w]` stack.
fn col2im(cols: &[f64], (c, h, w): (usize, usize, usize), g: ConvGeometry, ho: usize, wo: usize, out: &mut [f64]) {
    let k = g.kernel;
    let ncols = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_buf = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = valid_range(g, kj, w, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row_buf[oy * wo + lo..oy * wo + hi];
                    let ix0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        for (d, v) in dst_row[ix0..ix0 + hi - lo].iter_mut().zip(src) {
                            *d += *v;
                        }
                    } else {
                        for (j, v) in src.iter().enumerate() {
                            dst_row[ix0 + j * g.stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn is_identity_patch(g: ConvGeometry) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

fn weight_matrix(w: &Array4<f64>) -> ArrayView2<'_, f64> {
    let (o, i, kh, kw) = w.dim();
    w.view()
        .into_shape_with_order((o, i * kh * kw))
        .expect("weights must be contiguous")
}

fn add_bias(y: &mut Array4<f64>, bias: &Array1<f64>) {
    for mut img in y.outer_iter_mut() {
        for (mut ch, b) in img.outer_iter_mut().zip(bias.iter()) {
            ch += *b;
        }
    }
}

/// Sum over every axis except the channel axis.
pub fn channel_sum(x: &Array4<f64>) -> Array1<f64> {
    let (n, c, h, w) = x.dim();
    let data = contiguous(x.view());
    let mut out = Array1::zeros(c);
    for ni in 0..n {
        for ci in 0..c {
            let start = (ni * c + ci) * h * w;
            out[ci] += data[start..start + h * w].iter().sum::<f64>();
        }
    }
    out
}

fn mat<'a>(data: &'a [f64], rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

fn mat_mut<'a>(data: &'a mut [f64], rows: usize, cols: usize) -> ndarray::ArrayViewMut2<'a, f64> {
    ndarray::ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

/// Cross-correlation with weight `[O, I, k, k]`.
pub fn conv2d(x: &Array4<f64>, weight: &Array4<f64>, bias: Option<&Array1<f64>>, g: ConvGeometry) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let o = weight.dim().0;
    let (ho, wo) = (g.out_len(h), g.out_len(w));
    let xs = contiguous(x.view());
    let wm = weight_matrix(weight);
    let rows = wm.ncols();
    let mut y = vec![0.0; n * o * ho * wo];
    let mut cols = if is_identity_patch(g) { Vec::new() } else { vec![0.0; rows * ho * wo] };
    for ni in 0..n {
        let xi = &xs[ni * c * h * w..(ni + 1) * c * h * w];
        let patches = if is_identity_patch(g) {
            mat(xi, rows, ho * wo)
        } else {
            im2col(xi, (c, h, w), g, ho, wo, &mut cols);
            mat(&cols, rows, ho * wo)
        };
        let mut yi = mat_mut(&mut y[ni * o * ho * wo..(ni + 1) * o * ho * wo], o, ho * wo);
        ndarray::linalg::general_mat_mul(1.0, &wm, &patches, 0.0, &mut yi);
    }
    let mut y = Array4::from_shape_vec((n, o, ho, wo), y).expect("conv output");
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    y
}

pub struct ConvGrads {
    pub input: Option<Array4<f64>>,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

pub fn conv2d_backward(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    dy: &Array4<f64>,
    g: ConvGeometry,
    need_input: bool,
) -> ConvGrads {
    let (n, c, h, w) = x.dim();
    let (_, o, ho, wo) = dy.dim();
    let xs = contiguous(x.view());
    let dys = contiguous(dy.view());
    let wm = weight_matrix(weight);
    let rows = wm.ncols();
    let mut dw = Array2::<f64>::zeros((o, rows));
    let mut cols = vec![0.0; rows * ho * wo];
    let mut dx = need_input.then(|| vec![0.0; n * c * h * w]);
    let identity = is_identity_patch(g);
    for ni in 0..n {
        let xi = &xs[ni * c * h * w..(ni + 1) * c * h * w];
        let dyi = mat(&dys[ni * o * ho * wo..(ni + 1) * o * ho * wo], o, ho * wo);
        let patches = if identity {
            mat(xi, rows, ho * wo)
        } else {
            im2col(xi, (c, h, w), g, ho, wo, &mut cols);
            mat(&cols, rows, ho * wo)
        };
        ndarray::linalg::general_mat_mul(1.0, &dyi, &patches.t(), 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx[ni * c * h * w..(ni + 1) * c * h * w];
            if identity {
                let mut m = mat_mut(dxi, rows, ho * wo);
                ndarray::linalg::general_mat_mul(1.0, &wm.t(), &dyi, 0.0, &mut m);
            } else {
                let mut m = mat_mut(&mut cols, rows, ho * wo);
                ndarray::linalg::general_mat_mul(1.0, &wm.t(), &dyi, 0.0, &mut m);
                col2im(&cols, (c, h, w), g, ho, wo, dxi);
            }
        }
    }
    ConvGrads {
        input: dx.map(|v| Array4::from_shape_vec((n, c, h, w), v).expect("dx shape")),
        weight: dw.into_shape_with_order(weight.dim()).expect("dw shape"),
        bias: channel_sum(dy),
    }
}

/// Transposed convolution with weight `[I, O, k, k]`.
pub fn conv_transpose2d(x: &Array4<f64>, weight: &Array4<f64>, bias: Option<&Array1<f64>>, g: ConvGeometry) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let out_c = weight.dim().1;
    let (ho, wo) = (g.transposed_out_len(h), g.transposed_out_len(w));
    let xs = contiguous(x.view());
    let wm = weight_matrix(weight);
    let rows = wm.ncols();
    let mut cols = vec![0.0; rows * h * w];
    let mut y = vec![0.0; n * out_c * ho * wo];
    for ni in 0..n {
        let xi = mat(&xs[ni * c * h * w..(ni + 1) * c * h * w], c, h * w);
        let mut m = mat_mut(&mut cols, rows, h * w);
        ndarray::linalg::general_mat_mul(1.0, &wm.t(), &xi, 0.0, &mut m);
        col2im(&cols, (out_c, ho, wo), g, h, w, &mut y[ni * out_c * ho * wo..(ni + 1) * out_c * ho * wo]);
    }
    let mut y = Array4::from_shape_vec((n, out_c, ho, wo), y).expect("deconv output");
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    y
}

pub fn conv_transpose2d_backward(
    x: &Array4<f64>,
    weight: &Array4<f64>,
    dy: &Array4<f64>,
    g: ConvGeometry,
    need_input: bool,
) -> ConvGrads {
    let (n, c, h, w) = x.dim();
    let (_, out_c, ho, wo) = dy.dim();
    let xs = contiguous(x.view());
    let dys = contiguous(dy.view());
    let wm = weight_matrix(weight);
    let rows = wm.ncols();
    let mut dw = Array2::<f64>::zeros((c, rows));
    let mut dcols = vec![0.0; rows * h * w];
    let mut dx = need_input.then(|| vec![0.0; n * c * h * w]);
    for ni in 0..n {
        im2col(&dys[ni * out_c * ho * wo..(ni + 1) * out_c * ho * wo], (out_c, ho, wo), g, h, w, &mut dcols);
        let dm = mat(&dcols, rows, h * w);
        let xi = mat(&xs[ni * c * h * w..(ni + 1) * c * h * w], c, h * w);
        ndarray::linalg::general_mat_mul(1.0, &xi, &dm.t(), 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            let mut m = mat_mut(&mut dx[ni * c * h * w..(ni + 1) * c * h * w], c, h * w);
            ndarray::linalg::general_mat_mul(1.0, &wm, &dm, 0.0, &mut m);
        }
    }
    ConvGrads {
        input: dx.map(|v| Array4::from_shape_vec((n, c, h, w), v).expect("dx shape")),
        weight: dw.into_shape_with_order(weight.dim()).expect("dw shape"),
        bias: channel_sum(dy),
    }
}

/// NaN passes through unchanged.
pub fn relu(x: Array4<f64>) -> Array4<f64> {
    x.mapv_into(|v| if v < 0.0 { 0.0 } else { v })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(dy: &Array4<f64>, out: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2×2 max pooling, stride 2. Returns the pooled map and the flat argmax
/// offsets (within each input plane) needed for the backward pass.
pub fn max_pool2(x: &Array4<f64>) -> (Array4<f64>, Vec<u32>) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let data = contiguous(x.view());
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in data.chunks_exact(h * w) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                out.push(plane[best]);
                arg.push(best as u32);
            }
        }
    }
    (
        Array4::from_shape_vec((n, c, ho, wo), out).expect("pool shape"),
        arg,
    )
}

pub fn max_pool2_backward(dy: &Array4<f64>, argmax: &[u32], input_dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (n, c, h, w) = input_dim;
    let dy = contiguous(dy.view());
    let mut dx = vec![0.0; n * c * h * w];
    let per_plane = (h / 2) * (w / 2);
    for (p, plane) in dx.chunks_exact_mut(h * w).enumerate() {
        for j in 0..per_plane {
            let k = p * per_plane + j;
            plane[argmax[k] as usize] += dy[k];
        }
    }
    Array4::from_shape_vec(input_dim, dx).expect("pool grad shape")
}

pub struct BatchNormCache {
    pub normalized: Array4<f64>,
    pub inv_std: Array1<f64>,
}

pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased (population) variance over N·H·W.
    pub var: Array1<f64>,
    pub count: usize,
}

/// Training-mode batch norm using the batch statistics.
pub fn batch_norm_train(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
) -> (Array4<f64>, BatchNormCache, BatchStats) {
    let (n, c, h, w) = x.dim();
    let m = (n * h * w) as f64;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ci in 0..c {
        let ch = x.slice(s![.., ci, .., ..]);
        let mu = ch.sum() / m;
        let v = ch.fold(0.0, |acc, &v| acc + (v - mu) * (v - mu)) / m;
        mean[ci] = mu;
        var[ci] = v;
    }
    let inv_std = var.mapv(|v: f64| 1.0 / (v + eps).sqrt());
    let mut normalized = x.clone();
    let mut y = x.clone();
    for ci in 0..c {
        let (mu, is, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
        normalized.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| (v - mu) * is);
        y.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| (v - mu) * is * g + b);
    }
    (
        y,
        BatchNormCache {
            normalized,
            inv_std,
        },
        BatchStats {
            mean,
            var,
            count: n * h * w,
        },
    )
}

pub fn batch_norm_eval(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    mean: &Array1<f64>,
    var: &Array1<f64>,
    eps: f64,
) -> Array4<f64> {
    let mut y = x.clone();
    for ci in 0..x.dim().1 {
        let scale = gamma[ci] / (var[ci] + eps).sqrt();
        let shift = beta[ci] - mean[ci] * scale;
        y.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| v * scale + shift);
    }
    y
}

pub struct BatchNormGrads {
    pub input: Array4<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub fn batch_norm_backward(dy: &Array4<f64>, cache: &BatchNormCache, gamma: &Array1<f64>) -> BatchNormGrads {
    let (n, c, h, w) = dy.dim();
    let m = (n * h * w) as f64;
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    let mut dx = Array4::zeros(dy.dim());
    for ci in 0..c {
        let d = dy.slice(s![.., ci, .., ..]);
        let xh = cache.normalized.slice(s![.., ci, .., ..]);
        let sum_d = d.sum();
        let sum_dxh = ndarray::Zip::from(&d).and(&xh).fold(0.0, |acc, &a, &b| acc + a * b);
        dgamma[ci] = sum_dxh;
        dbeta[ci] = sum_d;
        let k = gamma[ci] * cache.inv_std[ci] / m;
        ndarray::Zip::from(dx.slice_mut(s![.., ci, .., ..]))
            .and(&d)
            .and(&xh)
            .for_each(|o, &dv, &xv| *o = k * (m * dv - sum_d - xv * sum_dxh));
    }
    BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dim: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, g: ConvGeometry) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (o, _, k, _) = w.dim();
        let (ho, wo) = (g.out_len(h), g.out_len(wd));
        Array4::from_shape_fn((n, o, ho, wo), |(ni, oi, oy, ox)| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x[[ni, ci, iy as usize, ix as usize]] * w[[oi, ci, ki, kj]];
                        }
                    }
                }
            }
            acc
        })
    }

    /// Direct scatter form of the transposed convolution.
    fn naive_conv_transpose(x: &Array4<f64>, w: &Array4<f64>, g: ConvGeometry) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (_, o, k, _) = w.dim();
        let (ho, wo) = (g.transposed_out_len(h), g.transposed_out_len(wd));
        let mut y = Array4::zeros((n, o, ho, wo));
        for ni in 0..n {
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..wd {
                        for oi in 0..o {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oy = (iy * g.stride + ki) as isize - g.pad as isize;
                                    let ox = (ix * g.stride + kj) as isize - g.pad as isize;
                                    if oy >= 0 && ox >= 0 && (oy as usize) < ho && (ox as usize) < wo {
                                        y[[ni, oi, oy as usize, ox as usize]] += x[[ni, ci, iy, ix]] * w[[ci, oi, ki, kj]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn conv_matches_naive_for_several_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in [ConvGeometry::SAME3, ConvGeometry::POINTWISE, ConvGeometry::new(3, 2, 1)] {
            for (h, w_) in [(8, 6), (2, 2), (1, 1), (3, 1)] {
                let x = random((2, 3, h, w_), &mut rng);
                let w = random((4, 3, g.kernel, g.kernel), &mut rng);
                assert!(max_abs_diff(&conv2d(&x, &w, None, g), &naive_conv(&x, &w, g)) < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_matches_naive_and_doubles_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for factor in [2, 4] {
            let g = ConvGeometry::upsampler(factor);
            let x = random((2, 3, 4, 5), &mut rng);
            let w = random((3, 2, g.kernel, g.kernel), &mut rng);
            let y = conv_transpose2d(&x, &w, None, g);
            assert_eq!(y.dim(), (2, 2, 4 * factor, 5 * factor));
            assert!(max_abs_diff(&y, &naive_conv_transpose(&x, &w, g)) < 1e-12);
        }
    }

    /// <dy, f(x)> must equal <f^T(dy), x> for a linear operator.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::new(3, 2, 1);
        let x = random((2, 3, 7, 8), &mut rng);
        let w = random((4, 3, 3, 3), &mut rng);
        let y = conv2d(&x, &w, None, g);
        let dy = random(y.dim(), &mut rng);
        let grads = conv2d_backward(&x, &w, &dy, g, true);
        let lhs = (&dy * &y).sum();
        let rhs = (grads.input.unwrap() * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w = (&grads.weight * &w).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn transposed_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = ConvGeometry::upsampler(2);
        let x = random((2, 3, 4, 4), &mut rng);
        let w = random((3, 5, 4, 4), &mut rng);
        let y = conv_transpose2d(&x, &w, None, g);
        let dy = random(y.dim(), &mut rng);
        let grads = conv_transpose2d_backward(&x, &w, &dy, g, true);
        let lhs = (&dy * &y).sum();
        assert!((lhs - (grads.input.unwrap() * &x).sum()).abs() < 1e-10);
        assert!((lhs - (&grads.weight * &w).sum()).abs() < 1e-10);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Array4::from_shape_vec((1, 1, 2, 4), vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.as_slice().unwrap(), &[5.0, 7.0]);
        let dy = Array4::from_elem((1, 1, 1, 2), 1.0);
        let dx = max_pool2_backward(&dy, &arg, x.dim());
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random((3, 2, 4, 4), &mut rng) * 3.0 + 1.0;
        let gamma = Array1::from(vec![1.0, 1.0]);
        let beta = Array1::zeros(2);
        let (y, _, stats) = batch_norm_train(&x, &gamma, &beta, 0.0);
        assert_eq!(stats.count, 48);
        for ci in 0..2 {
            let ch = y.slice(s![.., ci, .., ..]);
            assert!(ch.mean().unwrap().abs() < 1e-12);
            let var = ch.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-10);
        }
    }
}
