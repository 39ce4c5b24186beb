//! Layer primitives for the sequence-tensor CNN: forward passes plus exact
//! analytic backward passes, all in double precision.
//!
//! Layout convention is channels-first: activations are `[B, C, H, W]` with
//! `H` the API-sequence axis and `W` the token axis.

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Depth-wise 2D convolution: one `kh x kw` filter per channel, same padding.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub weight: Array3<f64>, // [C, kh, kw]
    pub bias: Array1<f64>,   // [C]
}

impl DepthwiseConv2d {
    pub fn init(channels: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / (kh * kw) as f64).sqrt();
        let weight =
            Array3::from_shape_simple_fn((channels, kh, kw), || normal_sample(rng) * scale);
        Self {
            weight,
            bias: Array1::zeros(channels),
        }
    }

    fn pads(&self) -> (usize, usize) {
        let (_, kh, kw) = self.weight.dim();
        ((kh - 1) / 2, (kw - 1) / 2)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let (_, kh, kw) = self.weight.dim();
        let (pt, pl) = self.pads();
        let mut y = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = self.bias[ci];
                        for p in 0..kh {
                            let ii = i + p;
                            if ii < pt || ii - pt >= h {
                                continue;
                            }
                            for q in 0..kw {
                                let jj = j + q;
                                if jj < pl || jj - pl >= w {
                                    continue;
                                }
                                acc += self.weight[[ci, p, q]] * x[[bi, ci, ii - pt, jj - pl]];
                            }
                        }
                        y[[bi, ci, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array4<f64>,
        dy: &Array4<f64>,
    ) -> (Array4<f64>, Array3<f64>, Array1<f64>) {
        let (b, c, h, w) = x.dim();
        let (_, kh, kw) = self.weight.dim();
        let (pt, pl) = self.pads();
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dw = Array3::zeros(self.weight.dim());
        let mut db = Array1::zeros(c);
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let g = dy[[bi, ci, i, j]];
                        if g == 0.0 {
                            continue;
                        }
                        db[ci] += g;
                        for p in 0..kh {
                            let ii = i + p;
                            if ii < pt || ii - pt >= h {
                                continue;
                            }
                            for q in 0..kw {
                                let jj = j + q;
                                if jj < pl || jj - pl >= w {
                                    continue;
                                }
                                dw[[ci, p, q]] += g * x[[bi, ci, ii - pt, jj - pl]];
                                dx[[bi, ci, ii - pt, jj - pl]] += g * self.weight[[ci, p, q]];
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

/// 1x1 convolution used for channel reduction: a per-position linear map.
#[derive(Debug, Clone)]
pub struct PointwiseConv {
    pub weight: Array2<f64>, // [out, in]
    pub bias: Array1<f64>,   // [out]
}

impl PointwiseConv {
    pub fn init(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / in_c as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_c, in_c), || normal_sample(rng) * scale);
        Self {
            weight,
            bias: Array1::zeros(out_c),
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let out_c = self.weight.nrows();
        let mut y = Array4::zeros((b, out_c, h, w));
        for bi in 0..b {
            let xb = x
                .slice(s![bi, .., .., ..])
                .to_shape((c, h * w))
                .expect("contiguous slice")
                .to_owned();
            let mut yb = self.weight.dot(&xb); // [out, h*w]
            for (o, mut row) in yb.rows_mut().into_iter().enumerate() {
                row += self.bias[o];
            }
            y.slice_mut(s![bi, .., .., ..])
                .assign(&yb.into_shape_with_order((out_c, h, w)).expect("shape"));
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array4<f64>,
        dy: &Array4<f64>,
    ) -> (Array4<f64>, Array2<f64>, Array1<f64>) {
        let (b, c, h, w) = x.dim();
        let out_c = self.weight.nrows();
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dw = Array2::zeros(self.weight.dim());
        let mut db = Array1::zeros(out_c);
        for bi in 0..b {
            let xb = x
                .slice(s![bi, .., .., ..])
                .to_shape((c, h * w))
                .expect("contiguous slice")
                .to_owned();
            let dyb = dy
                .slice(s![bi, .., .., ..])
                .to_shape((out_c, h * w))
                .expect("contiguous slice")
                .to_owned();
            dw += &dyb.dot(&xb.t());
            db += &dyb.sum_axis(ndarray::Axis(1));
            let dxb = self.weight.t().dot(&dyb); // [in, h*w]
            dx.slice_mut(s![bi, .., .., ..])
                .assign(&dxb.into_shape_with_order((c, h, w)).expect("shape"));
        }
        (dx, dw, db)
    }
}

/// Full-width 2D convolution block: `filters` kernels of shape
/// `[in_c, height, full_width]`, valid padding, so each kernel slides only
/// along the sequence axis and emits a 1-wide map of length `n - height + 1`.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub weight: Array4<f64>, // [F, C, h, W]
    pub bias: Array1<f64>,   // [F]
}

impl ConvBlock {
    pub fn init(
        in_c: usize,
        filters: usize,
        height: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_c * height * width) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let weight = Array4::from_shape_simple_fn((filters, in_c, height, width), || {
            normal_sample(rng) * scale
        });
        Self {
            weight,
            bias: Array1::zeros(filters),
        }
    }

    pub fn height(&self) -> usize {
        self.weight.dim().2
    }

    fn flat_weight(&self) -> Array2<f64> {
        let (f, c, h, w) = self.weight.dim();
        self.weight
            .to_shape((f, c * h * w))
            .expect("contiguous weight")
            .to_owned()
    }

    fn im2col(x: &Array4<f64>, bi: usize, height: usize) -> Array2<f64> {
        let (_, c, n, w) = x.dim();
        let t_out = n - height + 1;
        let mut cols = Array2::zeros((t_out, c * height * w));
        for t in 0..t_out {
            let window = x.slice(s![bi, .., t..t + height, ..]);
            let flat: Vec<f64> = window.iter().cloned().collect();
            cols.slice_mut(s![t, ..])
                .assign(&Array1::from_vec(flat));
        }
        cols
    }

    /// Output shape `[B, F, n - h + 1]`.
    pub fn forward(&self, x: &Array4<f64>) -> Array3<f64> {
        let (b, _, n, _) = x.dim();
        let (f, _, h, _) = self.weight.dim();
        let t_out = n - h + 1;
        let wmat = self.flat_weight();
        let mut y = Array3::zeros((b, f, t_out));
        for bi in 0..b {
            let cols = Self::im2col(x, bi, h); // [T, CHW]
            let yb = cols.dot(&wmat.t()); // [T, F]
            for fi in 0..f {
                for t in 0..t_out {
                    y[[bi, fi, t]] = yb[[t, fi]] + self.bias[fi];
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array4<f64>,
        dy: &Array3<f64>,
    ) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
        let (b, c, n, w) = x.dim();
        let (f, _, h, _) = self.weight.dim();
        let t_out = n - h + 1;
        let wmat = self.flat_weight(); // [F, CHW]
        let mut dx = Array4::zeros((b, c, n, w));
        let mut dw_flat = Array2::<f64>::zeros((f, c * h * w));
        let mut db = Array1::zeros(f);
        for bi in 0..b {
            let cols = Self::im2col(x, bi, h); // [T, CHW]
            let mut dyb = Array2::zeros((t_out, f));
            for fi in 0..f {
                for t in 0..t_out {
                    dyb[[t, fi]] = dy[[bi, fi, t]];
                    db[fi] += dy[[bi, fi, t]];
                }
            }
            dw_flat += &dyb.t().dot(&cols); // [F, CHW]
            let dcols = dyb.dot(&wmat); // [T, CHW]
            for t in 0..t_out {
                let drow = dcols.slice(s![t, ..]);
                let patch = drow
                    .to_shape((c, h, w))
                    .expect("patch shape");
                let mut target = dx.slice_mut(s![bi, .., t..t + h, ..]);
                target += &patch;
            }
        }
        let dw = dw_flat
            .into_shape_with_order((f, c, h, w))
            .expect("weight shape");
        (dx, dw, db)
    }
}

/// Global max over the sequence axis: `[B, F, T] -> [B, F]`, argmax kept for
/// the backward pass.
pub fn global_max_pool(x: &Array3<f64>) -> (Array2<f64>, Array2<usize>) {
    let (b, f, t) = x.dim();
    let mut y = Array2::zeros((b, f));
    let mut arg = Array2::zeros((b, f));
    for bi in 0..b {
        for fi in 0..f {
            let mut best = f64::NEG_INFINITY;
            let mut best_t = 0;
            for ti in 0..t {
                let v = x[[bi, fi, ti]];
                if v > best {
                    best = v;
                    best_t = ti;
                }
            }
            y[[bi, fi]] = best;
            arg[[bi, fi]] = best_t;
        }
    }
    (y, arg)
}

pub fn global_max_pool_backward(
    dy: &Array2<f64>,
    arg: &Array2<usize>,
    t: usize,
) -> Array3<f64> {
    let (b, f) = dy.dim();
    let mut dx = Array3::zeros((b, f, t));
    for bi in 0..b {
        for fi in 0..f {
            dx[[bi, fi, arg[[bi, fi]]]] = dy[[bi, fi]];
        }
    }
    dx
}

/// Batch normalization over a `[B, F]` activation; applied to the pooled
/// vector of each convolution block.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let b = x.nrows() as f64;
        let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty batch");
        let mut var = Array1::zeros(x.ncols());
        for row in x.rows() {
            for (j, v) in row.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        var.mapv_inplace(|v| v / b);
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut x_hat = x.clone();
        for mut row in x_hat.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let mut y = x_hat.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma[j] + self.beta[j];
            }
        }
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Folds the batch statistics into the running estimates (training only).
    pub fn update_running(&mut self, cache: &BatchNormCache, batch_size: usize) {
        let unbiased = if batch_size > 1 {
            cache
                .batch_var
                .mapv(|v| v * batch_size as f64 / (batch_size as f64 - 1.0))
        } else {
            cache.batch_var.clone()
        };
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &cache.batch_mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let inv = 1.0 / (self.running_var[j] + self.eps).sqrt();
                *v = (*v - self.running_mean[j]) * inv * self.gamma[j] + self.beta[j];
            }
        }
        y
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let (b, f) = dy.dim();
        let bf = b as f64;
        let mut dgamma = Array1::zeros(f);
        let mut dbeta = Array1::zeros(f);
        for bi in 0..b {
            for j in 0..f {
                dgamma[j] += dy[[bi, j]] * cache.x_hat[[bi, j]];
                dbeta[j] += dy[[bi, j]];
            }
        }
        // dx = inv_std/B * (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        let mut dx = Array2::zeros((b, f));
        for j in 0..f {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for bi in 0..b {
                let dxhat = dy[[bi, j]] * self.gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * cache.x_hat[[bi, j]];
            }
            for bi in 0..b {
                let dxhat = dy[[bi, j]] * self.gamma[j];
                dx[[bi, j]] = cache.inv_std[j] / bf
                    * (bf * dxhat - sum_dxhat - cache.x_hat[[bi, j]] * sum_dxhat_xhat);
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// Fully connected output layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>, // [out, in]
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (1.0 / in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || normal_sample(rng) * scale);
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        for mut row in y.rows_mut() {
            row += &self.bias;
        }
        y
    }

    pub fn backward(
        &self,
        x: &Array2<f64>,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(ndarray::Axis(0));
        let dx = dy.dot(&self.weight);
        (dx, dw, db)
    }
}

pub fn relu4(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu4_backward(y: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

pub fn relu3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu3_backward(y: &Array3<f64>, dy: &Array3<f64>) -> Array3<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

/// Inverted dropout mask: entries are `0` or `1/(1-p)`.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - p;
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

/// Mean (optionally class-weighted) cross entropy over a batch.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize], weights: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    let mut denom = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[label]);
        total += -w * probs[[i, label]].max(1e-300).ln();
        denom += w;
    }
    total / denom
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_grad(
    probs: &Array2<f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Array2<f64> {
    let (b, k) = probs.dim();
    let denom: f64 = labels
        .iter()
        .map(|&l| weights.map_or(1.0, |ws| ws[l]))
        .sum();
    let mut grad = Array2::zeros((b, k));
    for (i, &label) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[label]);
        for j in 0..k {
            let indicator = if j == label { 1.0 } else { 0.0 };
            grad[[i, j]] = w * (probs[[i, j]] - indicator) / denom;
        }
    }
    grad
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}
