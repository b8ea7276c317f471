//! Layers with explicit forward/backward passes.
//!
//! Activations after the input convolution live in feature-major matrices
//! `[F, B·L]` (feature rows, batch-segmented columns), so each convolution
//! of a whole batch is a single wide GEMM and batch-norm statistics read
//! contiguous per-feature slabs. Each layer caches what its backward pass
//! needs during a training forward; eval-mode forwards take `&self` and
//! cache nothing. Parameter gradients accumulate into per-layer buffers
//! read out by the optimizer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scalar type of the engine: f32 for training speed, f64 for gradient
/// checking.
pub trait Float:
    num_traits::Float
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

/// f64 -> F (never fails for f32/f64).
#[inline]
pub fn ff<F: Float>(v: f64) -> F {
    F::from(v).expect("float conversion")
}

/// F -> f64.
#[inline]
pub fn fd<F: Float>(v: F) -> f64 {
    num_traits::ToPrimitive::to_f64(&v).expect("float conversion")
}

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: Array2<F>,
    pub grad: Array2<F>,
}

impl<F: Float> Param<F> {
    fn new(value: Array2<F>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }
}

fn glorot<F: Float>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| ff(rng.random_range(-limit..limit)))
}

/// The split input convolution of block 1: a temporal kernel per filter
/// slid along every channel, followed by a spatial combination across all
/// channels and temporal filters. Parameters stay factorized
/// (`w_time [F1, K]`, `w_spat [F2, F1·C]`), but the forward pass contracts
/// them into one effective kernel `Weff[f2, (c,k)] = Σ_f1 w_spat·w_time`
/// and runs a single GEMM — the huge `[F1·C, B·T1]` intermediate never
/// materializes. `[B, C, T]` in, `[F2, B·T1]` out.
#[derive(Debug, Clone)]
pub struct InputConvBlock<F> {
    pub w_time: Param<F>, // [F1, K]
    pub w_spat: Param<F>, // [F2, F1·C]
    kernel: usize,
    n_channels: usize,
    cols: Option<Array2<F>>, // [C·K, B·T1]
    weff: Option<Array2<F>>, // [F2, C·K]
    input_dim: (usize, usize, usize),
}

impl<F: Float> InputConvBlock<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        n_time_filters: usize,
        n_out: usize,
        n_channels: usize,
        kernel: usize,
    ) -> Self {
        let w_time = Param::new(glorot(
            rng,
            n_time_filters,
            kernel,
            kernel,
            n_time_filters * kernel,
        ));
        let spat_fan_in = n_time_filters * n_channels;
        let w_spat = Param::new(glorot(rng, n_out, spat_fan_in, spat_fan_in, n_out));
        InputConvBlock {
            w_time,
            w_spat,
            kernel,
            n_channels,
            cols: None,
            weff: None,
            input_dim: (0, 0, 0),
        }
    }

    /// Weff[f2, c·K + k] = Σ_f1 w_spat[f2, f1·C + c] · w_time[f1, k]
    fn effective_kernel(&self) -> Array2<F> {
        let f1 = self.w_time.value.nrows();
        let k = self.kernel;
        let c = self.n_channels;
        let f2 = self.w_spat.value.nrows();
        let mut weff = Array2::zeros((f2, c * k));
        for f2i in 0..f2 {
            for ci in 0..c {
                for ki in 0..k {
                    let mut acc = F::zero();
                    for f1i in 0..f1 {
                        acc += self.w_spat.value[[f2i, f1i * c + ci]]
                            * self.w_time.value[[f1i, ki]];
                    }
                    weff[[f2i, ci * k + ki]] = acc;
                }
            }
        }
        weff
    }

    /// col[c·K + k, b·T1 + t] = x[b, c, t + k]; reuses the cached buffer.
    fn im2col(&self, x: &Array3<F>, scratch: Option<Array2<F>>) -> Array2<F> {
        let (b, c, t) = x.dim();
        let k = self.kernel;
        let t1 = t - k + 1;
        let dim = (c * k, b * t1);
        let mut cols = match scratch {
            Some(buf) if buf.dim() == dim => buf,
            _ => Array2::zeros(dim),
        };
        let width = b * t1;
        let cs = cols.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for bi in 0..b {
                let row = x.slice(ndarray::s![bi, ci, ..]);
                let row = row.as_slice().expect("contiguous");
                for ki in 0..k {
                    let base = (ci * k + ki) * width + bi * t1;
                    cs[base..base + t1].copy_from_slice(&row[ki..ki + t1]);
                }
            }
        }
        cols
    }

    pub fn forward_train(&mut self, x: &Array3<F>) -> Array2<F> {
        let (b, _, t) = x.dim();
        let t1 = t - self.kernel + 1;
        let scratch = self.cols.take();
        let cols = self.im2col(x, scratch);
        let weff = self.effective_kernel();
        let mut out = Array2::zeros((self.w_spat.value.nrows(), b * t1));
        general_mat_mul(F::one(), &weff, &cols, F::zero(), &mut out);
        self.cols = Some(cols);
        self.weff = Some(weff);
        self.input_dim = x.dim();
        out
    }

    pub fn forward_eval(&self, x: &Array3<F>) -> Array2<F> {
        let (b, _, t) = x.dim();
        let t1 = t - self.kernel + 1;
        let cols = self.im2col(x, None);
        let weff = self.effective_kernel();
        let mut out = Array2::zeros((self.w_spat.value.nrows(), b * t1));
        general_mat_mul(F::one(), &weff, &cols, F::zero(), &mut out);
        out
    }

    /// Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array3<F> {
        let cols = self.cols.take().expect("forward_train before backward");
        let weff = self.weff.take().expect("forward_train before backward");
        let (b, c, t) = self.input_dim;
        let k = self.kernel;
        let t1 = t - k + 1;
        let f1 = self.w_time.value.nrows();
        let f2 = self.w_spat.value.nrows();

        // dWeff, then chain through the factorization.
        let mut dweff = Array2::<F>::zeros((f2, c * k));
        general_mat_mul(F::one(), grad_out, &cols.t(), F::zero(), &mut dweff);
        for f1i in 0..f1 {
            for ki in 0..k {
                let mut acc = F::zero();
                for f2i in 0..f2 {
                    for ci in 0..c {
                        acc += dweff[[f2i, ci * k + ki]] * self.w_spat.value[[f2i, f1i * c + ci]];
                    }
                }
                self.w_time.grad[[f1i, ki]] += acc;
            }
        }
        for f2i in 0..f2 {
            for f1i in 0..f1 {
                for ci in 0..c {
                    let mut acc = F::zero();
                    for ki in 0..k {
                        acc += dweff[[f2i, ci * k + ki]] * self.w_time.value[[f1i, ki]];
                    }
                    self.w_spat.grad[[f2i, f1i * c + ci]] += acc;
                }
            }
        }

        // dX through the effective kernel.
        let mut dcol = Array2::zeros((c * k, b * t1));
        general_mat_mul(F::one(), &weff.t(), grad_out, F::zero(), &mut dcol);
        let mut dx = Array3::zeros((b, c, t));
        let ds = dcol.as_slice().expect("standard layout");
        let width = b * t1;
        for ci in 0..c {
            for bi in 0..b {
                let dst = dx.slice_mut(ndarray::s![bi, ci, ..]);
                let dst = dst.into_slice().expect("contiguous");
                for ki in 0..k {
                    let base = (ci * k + ki) * width + bi * t1;
                    let src = &ds[base..base + t1];
                    for ti in 0..t1 {
                        dst[ti + ki] += src[ti];
                    }
                }
            }
        }
        // keep the col buffer for reuse by the next forward
        self.cols = Some(cols);
        dx
    }
}

/// Temporal convolution across feature maps on batch-segmented rows:
/// `[Fi, B·L] -> [Fo, B·Lo]` with Lo = L−K+1.
#[derive(Debug, Clone)]
pub struct TemporalConv<F> {
    pub w: Param<F>, // [Fo, Fi·K]
    kernel: usize,
    cols: Option<Array2<F>>, // [Fi·K, B·Lo]
    input_dim: (usize, usize, usize), // (Fi, B, L)
}

impl<F: Float> TemporalConv<F> {
    pub fn new(rng: &mut ChaCha8Rng, n_out: usize, n_in: usize, kernel: usize) -> Self {
        let fan_in = n_in * kernel;
        TemporalConv {
            w: Param::new(glorot(rng, n_out, fan_in, fan_in, n_out * kernel)),
            kernel,
            cols: None,
            input_dim: (0, 0, 0),
        }
    }

    /// col[fi·K + k, b·Lo + t] = x[fi, b·L + t + k]; reuses the cached buffer.
    fn im2col(&self, x: &Array2<F>, batch: usize, scratch: Option<Array2<F>>) -> Array2<F> {
        let (fi, cols_in) = x.dim();
        let l = cols_in / batch;
        let k = self.kernel;
        let lo = l - k + 1;
        let xs = x.as_slice().expect("standard layout");
        let dim = (fi * k, batch * lo);
        let mut cols = match scratch {
            Some(buf) if buf.dim() == dim => buf,
            _ => Array2::zeros(dim),
        };
        let cs = cols.as_slice_mut().expect("standard layout");
        let width = batch * lo;
        for f in 0..fi {
            let row = &xs[f * cols_in..(f + 1) * cols_in];
            for ki in 0..k {
                let base = (f * k + ki) * width;
                for b in 0..batch {
                    let dst = &mut cs[base + b * lo..base + (b + 1) * lo];
                    dst.copy_from_slice(&row[b * l + ki..b * l + ki + lo]);
                }
            }
        }
        cols
    }

    fn apply(&self, cols: &Array2<F>) -> Array2<F> {
        let fo = self.w.value.nrows();
        let mut out = Array2::zeros((fo, cols.ncols()));
        general_mat_mul(F::one(), &self.w.value, cols, F::zero(), &mut out);
        out
    }

    pub fn forward_train(&mut self, x: &Array2<F>, batch: usize) -> Array2<F> {
        let scratch = self.cols.take();
        let cols = self.im2col(x, batch, scratch);
        let out = self.apply(&cols);
        self.cols = Some(cols);
        self.input_dim = (x.nrows(), batch, x.ncols() / batch);
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>, batch: usize) -> Array2<F> {
        self.apply(&self.im2col(x, batch, None))
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let cols = self.cols.take().expect("forward_train before backward");
        let (fi, batch, l) = self.input_dim;
        let k = self.kernel;
        let lo = l - k + 1;
        general_mat_mul(F::one(), grad_out, &cols.t(), F::one(), &mut self.w.grad);
        let mut dcol = Array2::zeros(cols.raw_dim());
        general_mat_mul(F::one(), &self.w.value.t(), grad_out, F::zero(), &mut dcol);
        self.cols = Some(cols);

        let mut dx = Array2::zeros((fi, batch * l));
        let dxs = dx.as_slice_mut().expect("standard layout");
        let ds = dcol.as_slice().expect("standard layout");
        let width = batch * lo;
        for f in 0..fi {
            let dst_row = &mut dxs[f * batch * l..(f + 1) * batch * l];
            for ki in 0..k {
                let base = (f * k + ki) * width;
                for b in 0..batch {
                    let src = &ds[base + b * lo..base + (b + 1) * lo];
                    let dst = &mut dst_row[b * l + ki..b * l + ki + lo];
                    for i in 0..lo {
                        dst[i] += src[i];
                    }
                }
            }
        }
        dx
    }
}

/// Batch normalization per feature map; each feature's statistics come from
/// one contiguous `[B·L]` row. Running statistics follow the usual
/// momentum-0.1 convention with an unbiased running variance.
#[derive(Debug, Clone)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>, // [1, F]
    pub beta: Param<F>,  // [1, F]
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    eps: F,
    momentum: F,
    normalized: Option<Array2<F>>,
    inv_std: Option<Array1<F>>,
}

impl<F: Float> BatchNorm<F> {
    pub fn new(n_features: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::from_elem((1, n_features), F::one())),
            beta: Param::new(Array2::zeros((1, n_features))),
            running_mean: Array1::zeros(n_features),
            running_var: Array1::from_elem(n_features, F::one()),
            eps: ff(1e-5),
            momentum: ff(0.1),
            normalized: None,
            inv_std: None,
        }
    }

    pub fn forward_train(&mut self, x: &Array2<F>) -> Array2<F> {
        let (f, width) = x.dim();
        let n = ff::<F>(width as f64);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::zeros((f, width));
        let mut normalized = Array2::zeros((f, width));
        let mut inv_std = Array1::zeros(f);
        {
            let outs = out.as_slice_mut().expect("standard layout");
            let norms = normalized.as_slice_mut().expect("standard layout");
            for fi in 0..f {
                let row = &xs[fi * width..(fi + 1) * width];
                let mut mean = F::zero();
                for &v in row {
                    mean += v;
                }
                mean = mean / n;
                let mut var = F::zero();
                for &v in row {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / n;
                let istd = (var + self.eps).sqrt().recip();
                inv_std[fi] = istd;
                let (g, bta) = (self.gamma.value[[0, fi]], self.beta.value[[0, fi]]);
                let nrm = &mut norms[fi * width..(fi + 1) * width];
                let dst = &mut outs[fi * width..(fi + 1) * width];
                for i in 0..width {
                    let xn = (row[i] - mean) * istd;
                    nrm[i] = xn;
                    dst[i] = g * xn + bta;
                }
                let unbias = n / (n - F::one());
                self.running_mean[fi] =
                    (F::one() - self.momentum) * self.running_mean[fi] + self.momentum * mean;
                self.running_var[fi] = (F::one() - self.momentum) * self.running_var[fi]
                    + self.momentum * var * unbias;
            }
        }
        self.normalized = Some(normalized);
        self.inv_std = Some(inv_std);
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        let (f, width) = x.dim();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::zeros((f, width));
        let outs = out.as_slice_mut().expect("standard layout");
        for fi in 0..f {
            let istd = (self.running_var[fi] + self.eps).sqrt().recip();
            let mean = self.running_mean[fi];
            let (g, bta) = (self.gamma.value[[0, fi]], self.beta.value[[0, fi]]);
            let row = &xs[fi * width..(fi + 1) * width];
            let dst = &mut outs[fi * width..(fi + 1) * width];
            for i in 0..width {
                dst[i] = g * (row[i] - mean) * istd + bta;
            }
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let normalized = self.normalized.take().expect("forward_train before backward");
        let inv_std = self.inv_std.take().expect("forward_train before backward");
        let (f, width) = grad_out.dim();
        let n = ff::<F>(width as f64);
        let gos = grad_out.as_slice().expect("standard layout");
        let norms = normalized.as_slice().expect("standard layout");
        let mut dx = Array2::zeros((f, width));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for fi in 0..f {
            let dy = &gos[fi * width..(fi + 1) * width];
            let xn = &norms[fi * width..(fi + 1) * width];
            let mut sum_dy = F::zero();
            let mut sum_dy_xn = F::zero();
            for i in 0..width {
                sum_dy += dy[i];
                sum_dy_xn += dy[i] * xn[i];
            }
            self.beta.grad[[0, fi]] += sum_dy;
            self.gamma.grad[[0, fi]] += sum_dy_xn;
            let scale = self.gamma.value[[0, fi]] * inv_std[fi];
            let mean_dy = sum_dy / n;
            let mean_dy_xn = sum_dy_xn / n;
            let dst = &mut dxs[fi * width..(fi + 1) * width];
            for i in 0..width {
                dst[i] = scale * (dy[i] - mean_dy - xn[i] * mean_dy_xn);
            }
        }
        dx
    }
}

/// Exponential linear unit: x for x > 0, e^x - 1 otherwise.
#[derive(Debug, Clone, Default)]
pub struct Elu<F> {
    output: Option<Array2<F>>,
}

impl<F: Float> Elu<F> {
    pub fn new() -> Self {
        Elu { output: None }
    }

    pub fn apply(v: F) -> F {
        if v > F::zero() {
            v
        } else {
            v.exp() - F::one()
        }
    }

    pub fn forward_train(&mut self, x: &Array2<F>) -> Array2<F> {
        let out = x.mapv(Self::apply);
        self.output = Some(out.clone());
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        x.mapv(Self::apply)
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let out = self.output.take().expect("forward_train before backward");
        let mut dx = grad_out.clone();
        ndarray::Zip::from(&mut dx).and(&out).for_each(|d, &y| {
            // dy/dx = 1 for x > 0, e^x = y + 1 otherwise
            if y <= F::zero() {
                *d = *d * (y + F::one());
            }
        });
        dx
    }
}

/// Max-pooling along each batch segment of each feature row; ties break to
/// the first (lowest) index. `[F, B·L] -> [F, B·Lo]`.
#[derive(Debug, Clone)]
pub struct MaxPool<F> {
    len: usize,
    stride: usize,
    /// Argmax as absolute offsets into the input row.
    argmax: Option<Array2<usize>>,
    input_dim: (usize, usize, usize), // (F, B, L)
    _marker: std::marker::PhantomData<F>,
}

impl<F: Float> MaxPool<F> {
    pub fn new(len: usize, stride: usize) -> Self {
        MaxPool {
            len,
            stride,
            argmax: None,
            input_dim: (0, 0, 0),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn out_len(&self, l: usize) -> usize {
        if l < self.len {
            0
        } else {
            (l - self.len) / self.stride + 1
        }
    }

    fn apply(&self, x: &Array2<F>, batch: usize) -> (Array2<F>, Array2<usize>) {
        let (f, cols_in) = x.dim();
        let l = cols_in / batch;
        let lo = self.out_len(l);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::zeros((f, batch * lo));
        let mut argmax = Array2::zeros((f, batch * lo));
        {
            let outs = out.as_slice_mut().expect("standard layout");
            let args = argmax.as_slice_mut().expect("standard layout");
            for fi in 0..f {
                let row = &xs[fi * cols_in..(fi + 1) * cols_in];
                for b in 0..batch {
                    let seg = &row[b * l..(b + 1) * l];
                    let dst = fi * batch * lo + b * lo;
                    for o in 0..lo {
                        let start = o * self.stride;
                        let mut best = seg[start];
                        let mut best_i = start;
                        for (i, &v) in seg
                            .iter()
                            .enumerate()
                            .take(start + self.len)
                            .skip(start + 1)
                        {
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                        outs[dst + o] = best;
                        args[dst + o] = b * l + best_i;
                    }
                }
            }
        }
        (out, argmax)
    }

    pub fn forward_train(&mut self, x: &Array2<F>, batch: usize) -> Array2<F> {
        let (out, argmax) = self.apply(x, batch);
        self.argmax = Some(argmax);
        self.input_dim = (x.nrows(), batch, x.ncols() / batch);
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>, batch: usize) -> Array2<F> {
        self.apply(x, batch).0
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let argmax = self.argmax.take().expect("forward_train before backward");
        let (f, batch, l) = self.input_dim;
        let width_out = grad_out.ncols();
        let mut dx = Array2::zeros((f, batch * l));
        let dxs = dx.as_slice_mut().expect("standard layout");
        let gos = grad_out.as_slice().expect("standard layout");
        let args = argmax.as_slice().expect("standard layout");
        for fi in 0..f {
            let dst = &mut dxs[fi * batch * l..(fi + 1) * batch * l];
            for i in 0..width_out {
                dst[args[fi * width_out + i]] += gos[fi * width_out + i];
            }
        }
        dx
    }
}

/// Inverted dropout; identity in eval mode or at p = 0.
#[derive(Debug, Clone)]
pub struct Dropout<F> {
    pub p: f64,
    mask: Option<Array2<F>>,
}

impl<F: Float> Dropout<F> {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }

    pub fn forward_train(&mut self, x: &Array2<F>, rng: &mut ChaCha8Rng) -> Array2<F> {
        if self.p <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let scale = ff::<F>(1.0 / keep);
        // mask drawn in memory order for run-to-run determinism
        let values: Vec<F> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < self.p {
                    F::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mask = Array2::from_shape_vec(x.dim(), values).expect("shape matches");
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        x.clone()
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        match self.mask.take() {
            Some(mask) => grad_out * &mask,
            None => grad_out.clone(),
        }
    }
}

/// Dense layer with bias: `[B, D] -> [B, N]`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub w: Param<F>,    // [N, D]
    pub bias: Param<F>, // [1, N]
    input: Option<Array2<F>>,
}

impl<F: Float> Dense<F> {
    pub fn new(rng: &mut ChaCha8Rng, n_out: usize, n_in: usize) -> Self {
        Dense {
            w: Param::new(glorot(rng, n_out, n_in, n_in, n_out)),
            bias: Param::new(Array2::zeros((1, n_out))),
            input: None,
        }
    }

    fn apply(&self, x: &Array2<F>) -> Array2<F> {
        let mut out = x.dot(&self.w.value.t());
        for mut row in out.rows_mut() {
            row += &self.bias.value.row(0);
        }
        out
    }

    pub fn forward_train(&mut self, x: Array2<F>) -> Array2<F> {
        let out = self.apply(&x);
        self.input = Some(x);
        out
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        self.apply(x)
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let x = self.input.take().expect("forward_train before backward");
        general_mat_mul(F::one(), &grad_out.t(), &x, F::one(), &mut self.w.grad);
        let col_sums = grad_out.sum_axis(Axis(0));
        let mut bias_row = self.bias.grad.row_mut(0);
        bias_row += &col_sums;
        grad_out.dot(&self.w.value)
    }
}

/// Transpose a feature-major map `[F, B·L]` into dense inputs `[B, F·L]`.
pub fn featmap_to_rows<F: Float>(x: &Array2<F>, batch: usize) -> Array2<F> {
    let (f, width) = x.dim();
    let l = width / batch;
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((batch, f * l));
    let outs = out.as_slice_mut().expect("standard layout");
    for fi in 0..f {
        for b in 0..batch {
            let src = &xs[fi * width + b * l..fi * width + (b + 1) * l];
            let dst = &mut outs[b * f * l + fi * l..b * f * l + (fi + 1) * l];
            dst.copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`featmap_to_rows`] for the gradient.
pub fn rows_to_featmap<F: Float>(x: &Array2<F>, n_features: usize) -> Array2<F> {
    let (batch, fl) = x.dim();
    let l = fl / n_features;
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array2::zeros((n_features, batch * l));
    let outs = out.as_slice_mut().expect("standard layout");
    for fi in 0..n_features {
        for b in 0..batch {
            let src = &xs[b * fl + fi * l..b * fl + (fi + 1) * l];
            let dst = &mut outs[fi * batch * l + b * l..fi * batch * l + (b + 1) * l];
            dst.copy_from_slice(src);
        }
    }
    out
}

/// Row-wise softmax probabilities from logits (numerically stabilized).
pub fn softmax<F: Float>(logits: &Array2<F>) -> Array2<F> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    probs
}

/// Mean categorical cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy<F: Float>(probs: &Array2<F>, labels: &[usize]) -> (f64, Array2<F>) {
    let b = probs.nrows();
    let mut loss = 0.0;
    let mut dlogits = probs.clone();
    let scale = ff::<F>(1.0 / b as f64);
    for (i, &y) in labels.iter().enumerate() {
        let p = fd(probs[[i, y]]).max(1e-300);
        loss -= p.ln();
        dlogits[[i, y]] = dlogits[[i, y]] - F::one();
    }
    dlogits.mapv_inplace(|v| v * scale);
    (loss / b as f64, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn elu_values() {
        assert_eq!(Elu::<f64>::apply(0.0), 0.0);
        assert_eq!(Elu::<f64>::apply(2.0), 2.0);
        assert_abs_diff_eq!(Elu::<f64>::apply(-30.0), -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(Elu::<f64>::apply(-1.0), (-1.0f64).exp() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Array2::from_shape_fn((8, 3), |_| rng.random_range(-20.0..20.0));
        let p = softmax(&logits);
        for row in p.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn maxpool_length_and_ties() {
        let pool = MaxPool::<f64>::new(3, 3);
        assert_eq!(pool.out_len(891), 297);
        assert_eq!(pool.out_len(288), 96);
        assert_eq!(pool.out_len(87), 29);
        assert_eq!(pool.out_len(20), 6);

        // tie inside a window: gradient goes to the first maximal index
        let mut pool = MaxPool::<f64>::new(3, 3);
        let x = Array2::from_shape_vec((1, 3), vec![5.0, 5.0, 1.0]).unwrap();
        let y = pool.forward_train(&x, 1);
        assert_eq!(y[[0, 0]], 5.0);
        let g = Array2::from_elem((1, 1), 1.0);
        let dx = pool.backward(&g);
        assert_eq!(dx[[0, 0]], 1.0);
        assert_eq!(dx[[0, 1]], 0.0);
    }

    #[test]
    fn maxpool_respects_batch_segments() {
        // two batch segments of length 4; windows must not straddle them
        let mut pool = MaxPool::<f64>::new(2, 2);
        let x = Array2::from_shape_vec((1, 8), vec![1.0, 2.0, 3.0, 4.0, 8.0, 7.0, 6.0, 5.0])
            .unwrap();
        let y = pool.forward_train(&x, 2);
        assert_eq!(y.as_slice().unwrap(), &[2.0, 4.0, 8.0, 6.0]);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm::<f64>::new(4);
        let x = Array2::from_shape_fn((4, 300), |_| rng.random_range(-3.0..9.0));
        let y = bn.forward_train(&x);
        for f in 0..4 {
            let row = y.row(f);
            let n = row.len() as f64;
            let mean: f64 = row.sum() / n;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "feature {f} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "feature {f} var {var}");
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Dropout::<f64>::new(0.5);
        let x = Array2::from_elem((3, 400), 1.0);
        assert_eq!(d.forward_eval(&x), x);
        let y = d.forward_train(&x, &mut rng);
        let mean: f64 = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.15, "inverted-dropout mean {mean}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn featmap_row_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((5, 3 * 7), |_| rng.random_range(-1.0..1.0));
        let rows = featmap_to_rows(&x, 3);
        assert_eq!(rows.dim(), (3, 35));
        let back = rows_to_featmap(&rows, 5);
        assert_eq!(back, x);
    }

    #[test]
    fn temporal_conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = TemporalConv::<f64>::new(&mut rng, 3, 2, 4);
        let batch = 2;
        let l = 10;
        let x = Array2::from_shape_fn((2, batch * l), |_| rng.random_range(-1.0..1.0));
        let y = conv.forward_train(&x, batch);
        let lo = l - 4 + 1;
        assert_eq!(y.dim(), (3, batch * lo));
        for fo in 0..3 {
            for b in 0..batch {
                for t in 0..lo {
                    let mut expect = 0.0;
                    for fi in 0..2 {
                        for k in 0..4 {
                            expect += conv.w.value[[fo, fi * 4 + k]] * x[[fi, b * l + t + k]];
                        }
                    }
                    assert_abs_diff_eq!(y[[fo, b * lo + t]], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn input_conv_matches_two_step_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (f1, f2, c, k) = (3, 2, 2, 4);
        let conv = InputConvBlock::<f64>::new(&mut rng, f1, f2, c, k);
        let (b, t) = (2, 9);
        let t1 = t - k + 1;
        let x = ndarray::Array3::from_shape_fn((b, c, t), |_| rng.random_range(-1.0..1.0));
        let y = conv.forward_eval(&x);
        assert_eq!(y.dim(), (f2, b * t1));
        for f2i in 0..f2 {
            for bi in 0..b {
                for ti in 0..t1 {
                    // reference: temporal convolution per (f1, channel),
                    // then the spatial combination
                    let mut expect = 0.0;
                    for f1i in 0..f1 {
                        for ci in 0..c {
                            let mut temporal = 0.0;
                            for ki in 0..k {
                                temporal += conv.w_time.value[[f1i, ki]] * x[[bi, ci, ti + ki]];
                            }
                            expect += conv.w_spat.value[[f2i, f1i * c + ci]] * temporal;
                        }
                    }
                    assert_abs_diff_eq!(y[[f2i, bi * t1 + ti]], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn duplicated_sample_keeps_mean_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = Array2::from_shape_fn((2, 20), |_| rng.random_range(-1.0..1.0));
        let mut x2 = Array2::zeros((2, 40));
        for fi in 0..2 {
            for t in 0..20 {
                x2[[fi, t]] = x1[[fi, t]];
                x2[[fi, 20 + t]] = x1[[fi, t]];
            }
        }
        let mk = || {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            TemporalConv::<f64>::new(&mut r, 3, 2, 4)
        };
        let run = |conv: &mut TemporalConv<f64>, x: &Array2<f64>, batch: usize,
                   labels: &[usize]| {
            let h = conv.forward_train(x, batch);
            let flat = featmap_to_rows(&h, batch);
            let probs = softmax(&flat.slice(ndarray::s![.., 0..2]).to_owned());
            let (_, dl) = cross_entropy(&probs, labels);
            let mut dflat = Array2::zeros(flat.raw_dim());
            for bi in 0..batch {
                dflat[[bi, 0]] = dl[[bi, 0]];
                dflat[[bi, 1]] = dl[[bi, 1]];
            }
            let dh = rows_to_featmap(&dflat, 3);
            conv.backward(&dh);
            conv.w.grad.clone()
        };
        let mut c1 = mk();
        let g1 = run(&mut c1, &x1, 1, &[0]);
        let mut c2 = mk();
        let g2 = run(&mut c2, &x2, 2, &[0, 0]);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
