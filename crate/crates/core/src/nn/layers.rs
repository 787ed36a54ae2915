//! Layer vocabulary and the batched kernels behind it.
//!
//! Activations are `[batch][time][channel]` tensors. Time-local layers
//! (convolution, batch norm, pooling) act along the time axis; dense and
//! softmax layers act on the channel axis of every `(batch, time)` row.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::lstm::LstmLayer;
use super::tensor::{gemm, Scalar, Strides, Tensor};
use crate::error::{Error, Result};

const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: output length is `len - 2`.
    Valid,
    /// One zero on each side: output length equals input length.
    Same,
}

/// Architecture-level description of one layer, without parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    GaussianNoise { std: f64 },
    /// Length-3, stride-1 convolution with `filters` output channels.
    Conv1d { filters: usize, padding: Padding },
    BatchNorm { epsilon: f64, momentum: f64 },
    Relu,
    /// Non-overlapping pairs; an odd trailing element is dropped.
    MaxPool,
    Flatten,
    Dropout { rate: f64 },
    Dense { units: usize },
    /// Dense layer to `classes` units followed by a softmax.
    Softmax { classes: usize },
    /// Regroups `(windows, 1, features)` into `(sequences, steps, features)`.
    Sequence,
    Lstm { hidden: usize },
}

impl LayerSpec {
    pub const BN_EPSILON: f64 = 1e-3;
    pub const BN_MOMENTUM: f64 = 0.99;

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm { epsilon: Self::BN_EPSILON, momentum: Self::BN_MOMENTUM }
    }

    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv1d { filters, padding: Padding::Valid }
    }

    /// Per-window output `(len, channels)` given the input shape.
    pub fn output_shape(&self, len: usize, ch: usize) -> Result<(usize, usize)> {
        let bad = |msg: String| Err(Error::Shape(msg));
        match *self {
            LayerSpec::Conv1d { filters, padding } => match padding {
                Padding::Valid if len < 3 => bad(format!("convolution needs length >= 3, got {len}")),
                Padding::Valid => Ok((len - 2, filters)),
                Padding::Same if len == 0 => bad("convolution on empty input".into()),
                Padding::Same => Ok((len, filters)),
            },
            LayerSpec::MaxPool if len < 2 => bad(format!("max pooling needs length >= 2, got {len}")),
            LayerSpec::MaxPool => Ok((len / 2, ch)),
            LayerSpec::Flatten => Ok((1, len * ch)),
            LayerSpec::Dense { units } => Ok((len, units)),
            LayerSpec::Softmax { classes } => Ok((len, classes)),
            LayerSpec::Lstm { hidden } => Ok((len, hidden)),
            LayerSpec::Sequence if len != 1 => bad(format!("sequence regrouping needs length 1, got {len}")),
            LayerSpec::GaussianNoise { .. }
            | LayerSpec::BatchNorm { .. }
            | LayerSpec::Relu
            | LayerSpec::Dropout { .. }
            | LayerSpec::Sequence => Ok((len, ch)),
        }
    }

    /// True for layers that act independently at every time step of a window
    /// or purely along time (everything before `Flatten` in a CNN).
    pub fn is_temporal(&self) -> bool {
        matches!(
            self,
            LayerSpec::GaussianNoise { .. }
                | LayerSpec::Conv1d { .. }
                | LayerSpec::BatchNorm { .. }
                | LayerSpec::Relu
                | LayerSpec::MaxPool
        )
    }
}

/// A parameter tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Batch-norm running statistics are stored but not optimized.
    pub trainable: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: &'static str, shape: Vec<usize>, value: Vec<F>, trainable: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![F::zero(); value.len()];
        Self { name, shape, value, grad, trainable }
    }

    pub fn filled(name: &'static str, shape: Vec<usize>, v: F, trainable: bool) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n], trainable)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn cast<G: Scalar>(&self) -> Param<G> {
        Param {
            name: self.name,
            shape: self.shape.clone(),
            value: self.value.iter().map(|&x| G::of(x.f64())).collect(),
            grad: vec![G::zero(); self.value.len()],
            trainable: self.trainable,
        }
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

fn samples_per_chunk(len: usize) -> usize {
    (CHUNK_ROWS / len.max(1)).max(1)
}

/// Valid cross-correlation with a `[3][c_in][c_out]` kernel:
/// `out[t, o] = bias[o] + sum_{d, c} kernel[d, c, o] * x[t + d, c]`.
///
/// The 3 consecutive input rows of an output step are contiguous, so each
/// chunk of samples is a single strided matrix product.
pub(crate) fn conv_forward<F: Scalar>(x: &Tensor<F>, kernel: &[F], bias: &[F]) -> Tensor<F> {
    let [n, len, cin] = x.shape();
    let cout = bias.len();
    assert!(len >= 3, "convolution needs length >= 3");
    assert_eq!(kernel.len(), 3 * cin * cout, "kernel shape");
    let lo = len - 2;
    let per = samples_per_chunk(len);
    let mut out = Tensor::zeros(n, lo, cout);
    if n == 0 {
        return out;
    }
    out.data_mut()
        .par_chunks_mut(per * lo * cout)
        .zip(x.data().par_chunks(per * len * cin))
        .for_each(|(o, xi)| {
            let ns = xi.len() / (len * cin);
            let rows = ns * len - 2;
            let mut tmp = vec![F::zero(); rows * cout];
            gemm(rows, 3 * cin, cout, xi, Strides(cin, 1), kernel, Strides(cout, 1), F::zero(), &mut tmp, Strides(cout, 1));
            for s in 0..ns {
                for t in 0..lo {
                    let src = &tmp[(s * len + t) * cout..][..cout];
                    let dst = &mut o[(s * lo + t) * cout..][..cout];
                    for ((d, &v), &b) in dst.iter_mut().zip(src).zip(bias) {
                        *d = v + b;
                    }
                }
            }
        });
    out
}

/// Gradients of [`conv_forward`]: returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv_backward<F: Scalar>(
    x: &Tensor<F>,
    kernel: &[F],
    gout: &Tensor<F>,
) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let [n, len, cin] = x.shape();
    let cout = gout.channels();
    let lo = len - 2;
    let per = samples_per_chunk(len);
    let mut gin = Tensor::zeros(n, len, cin);
    let partials: Vec<(Vec<F>, Vec<F>)> = gin
        .data_mut()
        .par_chunks_mut(per * len * cin)
        .zip(x.data().par_chunks(per * len * cin))
        .zip(gout.data().par_chunks(per * lo * cout))
        .map(|((gi, xi), go)| {
            let ns = xi.len() / (len * cin);
            let rows = ns * len - 2;
            // Output gradient laid out on the chunk's input rows; rows that
            // straddle two samples stay zero.
            let mut gexp = vec![F::zero(); rows * cout];
            for s in 0..ns {
                for t in 0..lo {
                    gexp[(s * len + t) * cout..][..cout]
                        .copy_from_slice(&go[(s * lo + t) * cout..][..cout]);
                }
            }
            let mut gk = vec![F::zero(); 3 * cin * cout];
            gemm(3 * cin, rows, cout, xi, Strides(1, cin), &gexp, Strides(cout, 1), F::zero(), &mut gk, Strides(cout, 1));
            let mut gb = vec![F::zero(); cout];
            for row in gexp.chunks_exact(cout) {
                for (b, &g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let mut cols = vec![F::zero(); rows * 3 * cin];
            gemm(rows, cout, 3 * cin, &gexp, Strides(cout, 1), kernel, Strides(1, cout), F::zero(), &mut cols, Strides(3 * cin, 1));
            for r in 0..rows {
                let dst = &mut gi[r * cin..r * cin + 3 * cin];
                for (d, &v) in dst.iter_mut().zip(&cols[r * 3 * cin..(r + 1) * 3 * cin]) {
                    *d += v;
                }
            }
            (gk, gb)
        })
        .collect();
    let mut gk = vec![F::zero(); 3 * cin * cout];
    let mut gb = vec![F::zero(); cout];
    for (pk, pb) in partials {
        gk.iter_mut().zip(pk).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    (gin, gk, gb)
}

fn pad_same<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let [n, len, ch] = x.shape();
    let mut out = Tensor::zeros(n, len + 2, ch);
    for s in 0..n {
        out.data_mut()[(s * (len + 2) + 1) * ch..][..len * ch].copy_from_slice(x.item(s));
    }
    out
}

fn unpad_same<F: Scalar>(g: &Tensor<F>) -> Tensor<F> {
    let [n, len2, ch] = g.shape();
    let len = len2 - 2;
    let mut out = Tensor::zeros(n, len, ch);
    for s in 0..n {
        out.data_mut()[s * len * ch..][..len * ch].copy_from_slice(&g.item(s)[ch..(len + 1) * ch]);
    }
    out
}

/// Per-channel `(mean, biased variance)` over batch and time.
fn channel_moments<F: Scalar>(x: &Tensor<F>) -> (Vec<f64>, Vec<f64>) {
    let ch = x.channels();
    let rows = x.batch() * x.len();
    let mut mean = vec![0.0; ch];
    for row in x.data().chunks_exact(ch) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; ch];
    for row in x.data().chunks_exact(ch) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    (mean, var)
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub(crate) fn bn_affine<F: Scalar>(
    x: &Tensor<F>,
    gamma: &[F],
    beta: &[F],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Tensor<F> {
    let ch = x.channels();
    let scale: Vec<F> = (0..ch).map(|c| F::of(gamma[c].f64() / (var[c] + eps).sqrt())).collect();
    let shift: Vec<F> = (0..ch).map(|c| F::of(beta[c].f64()) - scale[c] * F::of(mean[c])).collect();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(ch) {
        for ((v, &a), &b) in row.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * a + b;
        }
    }
    out
}

pub(crate) fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(F::zero()));
    out
}

/// Returns the pooled tensor and, per output element, whether the second of
/// the pair won (ties go to the first).
pub(crate) fn max_pool<F: Scalar>(x: &Tensor<F>) -> (Tensor<F>, Vec<bool>) {
    let [n, len, ch] = x.shape();
    let lo = len / 2;
    let mut out = Tensor::zeros(n, lo, ch);
    let mut second = vec![false; n * lo * ch];
    for s in 0..n {
        let xi = x.item(s);
        for t in 0..lo {
            for c in 0..ch {
                let a = xi[2 * t * ch + c];
                let b = xi[(2 * t + 1) * ch + c];
                let idx = (s * lo + t) * ch + c;
                if b > a {
                    out.data_mut()[idx] = b;
                    second[idx] = true;
                } else {
                    out.data_mut()[idx] = a;
                }
            }
        }
    }
    (out, second)
}

/// Row-wise `x W + b` on the channel axis; `w` is `[c_in][units]`.
pub(crate) fn dense<F: Scalar>(x: &Tensor<F>, w: &[F], b: &[F]) -> Tensor<F> {
    let [n, len, cin] = x.shape();
    let units = b.len();
    let rows = n * len;
    let mut out = Tensor::zeros(n, len, units);
    for row in out.data_mut().chunks_exact_mut(units) {
        row.copy_from_slice(b);
    }
    gemm(rows, cin, units, x.data(), Strides(cin, 1), w, Strides(units, 1), F::one(), out.data_mut(), Strides(units, 1));
    out
}

fn dense_backward<F: Scalar>(x: &Tensor<F>, w: &[F], gout: &Tensor<F>) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let [n, len, cin] = x.shape();
    let units = gout.channels();
    let rows = n * len;
    let mut gw = vec![F::zero(); cin * units];
    gemm(cin, rows, units, x.data(), Strides(1, cin), gout.data(), Strides(units, 1), F::zero(), &mut gw, Strides(units, 1));
    let mut gb = vec![F::zero(); units];
    for row in gout.data().chunks_exact(units) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut gin = Tensor::zeros(n, len, cin);
    gemm(rows, units, cin, gout.data(), Strides(units, 1), w, Strides(1, units), F::zero(), gin.data_mut(), Strides(cin, 1));
    (gin, gw, gb)
}

/// Numerically stable softmax over the channel axis.
pub fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let ch = x.channels();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(ch) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

// ---------------------------------------------------------------------------
// Stateful layers
// ---------------------------------------------------------------------------

/// What a training forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
enum Cache<F> {
    Input(Tensor<F>),
    Norm { xhat: Tensor<F>, inv_std: Vec<f64> },
    Mask(Vec<F>),
    Pool { second: Vec<bool>, in_shape: [usize; 3] },
    Shape([usize; 3]),
    Softmax { input: Tensor<F>, probs: Tensor<F> },
    None,
}

/// A layer with its parameters and forward-pass cache.
#[derive(Debug, Clone)]
pub struct Layer<F> {
    pub spec: LayerSpec,
    pub params: Vec<Param<F>>,
    lstm: Option<LstmLayer<F>>,
    cache: Option<Cache<F>>,
}

impl<F: Scalar> Layer<F> {
    pub(crate) fn new(spec: LayerSpec, params: Vec<Param<F>>) -> Self {
        let lstm = match spec {
            LayerSpec::Lstm { hidden } => Some(LstmLayer::new(hidden)),
            _ => None,
        };
        Self { spec, params, lstm, cache: None }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        if let Some(l) = self.lstm.as_mut() {
            l.clear_cache();
        }
    }

    /// ReLU masks and max-pool choices of the last training forward pass;
    /// gradient checks use them to spot perturbations that cross a kink.
    pub(crate) fn switch_pattern(&self) -> Option<Vec<bool>> {
        match (&self.spec, &self.cache) {
            (LayerSpec::Relu, Some(Cache::Input(out))) => Some(out.data().iter().map(|v| v.f64() > 0.0).collect()),
            (LayerSpec::MaxPool, Some(Cache::Pool { second, .. })) => Some(second.clone()),
            _ => None,
        }
    }

    /// Inference-mode evaluation; never touches caches or running statistics.
    pub fn infer(&self, x: &Tensor<F>, sequences: usize) -> Result<Tensor<F>> {
        self.check_input(x)?;
        Ok(match self.spec {
            LayerSpec::GaussianNoise { .. } | LayerSpec::Dropout { .. } => x.clone(),
            LayerSpec::Conv1d { padding, .. } => {
                let (k, b) = (&self.params[0].value, &self.params[1].value);
                match padding {
                    Padding::Valid => conv_forward(x, k, b),
                    Padding::Same => conv_forward(&pad_same(x), k, b),
                }
            }
            LayerSpec::BatchNorm { epsilon, .. } => {
                let mean: Vec<f64> = self.params[2].value.iter().map(|v| v.f64()).collect();
                let var: Vec<f64> = self.params[3].value.iter().map(|v| v.f64()).collect();
                bn_affine(x, &self.params[0].value, &self.params[1].value, &mean, &var, epsilon)
            }
            LayerSpec::Relu => relu(x),
            LayerSpec::MaxPool => max_pool(x).0,
            LayerSpec::Flatten => {
                let [n, len, ch] = x.shape();
                x.clone().reshape(n, 1, len * ch)
            }
            LayerSpec::Dense { .. } => dense(x, &self.params[0].value, &self.params[1].value),
            LayerSpec::Softmax { .. } => {
                softmax_rows(&dense(x, &self.params[0].value, &self.params[1].value))
            }
            LayerSpec::Sequence => regroup(x, sequences)?,
            LayerSpec::Lstm { .. } => {
                super::lstm::lstm_forward(x, &self.params[0].value, &self.params[1].value, &self.params[2].value, None)
                    .hidden
            }
        })
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let [_, len, ch] = x.shape();
        self.spec.output_shape(len, ch)?;
        let want = match self.spec {
            LayerSpec::Conv1d { .. } => Some(self.params[0].shape[1]),
            LayerSpec::BatchNorm { .. } => Some(self.params[0].shape[0]),
            LayerSpec::Dense { .. } | LayerSpec::Softmax { .. } | LayerSpec::Lstm { .. } => {
                Some(self.params[0].shape[0])
            }
            _ => None,
        };
        match want {
            Some(w) if w != ch => Err(Error::Shape(format!(
                "{:?} expects {w} input channels, got {ch}",
                self.spec
            ))),
            _ => Ok(()),
        }
    }

    /// Training- or inference-mode forward pass that records what backward needs.
    pub(crate) fn forward(
        &mut self,
        x: &Tensor<F>,
        mode: Mode,
        sequences: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let (out, cache) = match (&self.spec, mode) {
            (LayerSpec::GaussianNoise { std }, Mode::Train) => {
                let mut out = x.clone();
                if *std > 0.0 {
                    let normal = Normal::new(0.0, *std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    for v in out.data_mut() {
                        *v += F::of(normal.sample(rng));
                    }
                }
                (out, Cache::None)
            }
            (LayerSpec::Dropout { rate }, Mode::Train) => {
                let keep = 1.0 - rate;
                let scale = F::of(1.0 / keep);
                let mask: Vec<F> = (0..x.data().len())
                    .map(|_| if rng.random::<f64>() < *rate { F::zero() } else { scale })
                    .collect();
                let mut out = x.clone();
                out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
                (out, Cache::Mask(mask))
            }
            (LayerSpec::BatchNorm { epsilon, momentum }, Mode::Train) => {
                let (mean, var) = channel_moments(x);
                let ch = x.channels();
                let ones = vec![F::one(); ch];
                let zeros = vec![F::zero(); ch];
                let xhat = bn_affine(x, &ones, &zeros, &mean, &var, *epsilon);
                let mut out = xhat.clone();
                let (gamma, beta) = (&self.params[0].value, &self.params[1].value);
                for row in out.data_mut().chunks_exact_mut(ch) {
                    for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
                        *v = *v * g + b;
                    }
                }
                let m = *momentum;
                for c in 0..ch {
                    let rm = &mut self.params[2].value[c];
                    *rm = F::of(m * rm.f64() + (1.0 - m) * mean[c]);
                    let rv = &mut self.params[3].value[c];
                    *rv = F::of(m * rv.f64() + (1.0 - m) * var[c]);
                }
                let inv_std = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                (out, Cache::Norm { xhat, inv_std })
            }
            (LayerSpec::Conv1d { .. }, _) => (self.infer(x, sequences)?, Cache::Input(x.clone())),
            (LayerSpec::Relu, _) => {
                let out = relu(x);
                (out.clone(), Cache::Input(out))
            }
            (LayerSpec::MaxPool, _) => {
                let (out, second) = max_pool(x);
                (out, Cache::Pool { second, in_shape: x.shape() })
            }
            (LayerSpec::Flatten | LayerSpec::Sequence, _) => {
                (self.infer(x, sequences)?, Cache::Shape(x.shape()))
            }
            (LayerSpec::Dense { .. }, _) => (self.infer(x, sequences)?, Cache::Input(x.clone())),
            (LayerSpec::Softmax { .. }, _) => {
                let probs = self.infer(x, sequences)?;
                (probs.clone(), Cache::Softmax { input: x.clone(), probs })
            }
            (LayerSpec::Lstm { .. }, _) => {
                let lstm = self.lstm.as_mut().expect("lstm state");
                let out = lstm.forward(x, &self.params[0].value, &self.params[1].value, &self.params[2].value);
                (out, Cache::None)
            }
            // Inference mode for noise, dropout and batch norm.
            _ => (self.infer(x, sequences)?, Cache::None),
        };
        self.cache = Some(cache);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, gout: &Tensor<F>) -> Result<Tensor<F>> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        let gin = match (&self.spec, cache) {
            (LayerSpec::GaussianNoise { .. } | LayerSpec::Dropout { .. } | LayerSpec::BatchNorm { .. }, Cache::None) => {
                // Inference-mode pass: identity or a fixed affine map.
                match self.spec {
                    LayerSpec::BatchNorm { epsilon, .. } => {
                        let ch = gout.channels();
                        let mut g = gout.clone();
                        let scale: Vec<F> = (0..ch)
                            .map(|c| F::of(self.params[0].value[c].f64() / (self.params[3].value[c].f64() + epsilon).sqrt()))
                            .collect();
                        for row in g.data_mut().chunks_exact_mut(ch) {
                            row.iter_mut().zip(&scale).for_each(|(v, &s)| *v *= s);
                        }
                        g
                    }
                    _ => gout.clone(),
                }
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                let mut g = gout.clone();
                g.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
                g
            }
            (LayerSpec::BatchNorm { .. }, Cache::Norm { xhat, inv_std }) => {
                let ch = gout.channels();
                let rows = (gout.batch() * gout.len()) as f64;
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                for (grow, xrow) in gout.data().chunks_exact(ch).zip(xhat.data().chunks_exact(ch)) {
                    for c in 0..ch {
                        let g = grow[c].f64();
                        sum_g[c] += g;
                        sum_gx[c] += g * xrow[c].f64();
                    }
                }
                for c in 0..ch {
                    self.params[0].grad[c] += F::of(sum_gx[c]);
                    self.params[1].grad[c] += F::of(sum_g[c]);
                }
                let mut gin = gout.clone();
                for (grow, xrow) in gin.data_mut().chunks_exact_mut(ch).zip(xhat.data().chunks_exact(ch)) {
                    for c in 0..ch {
                        let k = self.params[0].value[c].f64() * inv_std[c];
                        let g = grow[c].f64();
                        grow[c] = F::of(k * (g - sum_g[c] / rows - xrow[c].f64() * sum_gx[c] / rows));
                    }
                }
                gin
            }
            (LayerSpec::Conv1d { padding, .. }, Cache::Input(x)) => {
                let x = match padding {
                    Padding::Valid => x,
                    Padding::Same => pad_same(&x),
                };
                let (gin, gk, gb) = conv_backward(&x, &self.params[0].value, gout);
                self.params[0].grad.iter_mut().zip(gk).for_each(|(a, b)| *a += b);
                self.params[1].grad.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                match padding {
                    Padding::Valid => gin,
                    Padding::Same => unpad_same(&gin),
                }
            }
            (LayerSpec::Relu, Cache::Input(out)) => {
                let mut g = gout.clone();
                g.data_mut().iter_mut().zip(out.data()).for_each(|(v, &y)| {
                    if y <= F::zero() {
                        *v = F::zero();
                    }
                });
                g
            }
            (LayerSpec::MaxPool, Cache::Pool { second, in_shape }) => {
                let [n, len, ch] = in_shape;
                let lo = len / 2;
                let mut gin = Tensor::zeros(n, len, ch);
                for s in 0..n {
                    for t in 0..lo {
                        for c in 0..ch {
                            let idx = (s * lo + t) * ch + c;
                            let src = 2 * t + usize::from(second[idx]);
                            gin.data_mut()[(s * len + src) * ch + c] = gout.data()[idx];
                        }
                    }
                }
                gin
            }
            (LayerSpec::Flatten | LayerSpec::Sequence, Cache::Shape([n, len, ch])) => {
                gout.clone().reshape(n, len, ch)
            }
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                let (gin, gw, gb) = dense_backward(&x, &self.params[0].value, gout);
                self.params[0].grad.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
                self.params[1].grad.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                gin
            }
            (LayerSpec::Softmax { .. }, Cache::Softmax { input, probs }) => {
                let ch = probs.channels();
                let mut gz = gout.clone();
                for (grow, prow) in gz.data_mut().chunks_exact_mut(ch).zip(probs.data().chunks_exact(ch)) {
                    let dot: F = grow.iter().zip(prow).map(|(&g, &p)| g * p).sum();
                    grow.iter_mut().zip(prow).for_each(|(g, &p)| *g = p * (*g - dot));
                }
                let (gin, gw, gb) = dense_backward(&input, &self.params[0].value, &gz);
                self.params[0].grad.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
                self.params[1].grad.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                gin
            }
            (LayerSpec::Lstm { .. }, Cache::None) => {
                let lstm = self.lstm.as_mut().expect("lstm state");
                let (w, rest) = self.params.split_at_mut(1);
                let (u, b) = rest.split_at_mut(1);
                lstm.backward(gout, &mut w[0], &mut u[0], &mut b[0])?
            }
            _ => return Err(Error::NoForwardCache),
        };
        Ok(gin)
    }
}

/// `(sequences * steps, 1, f)` to `(sequences, steps, f)`.
fn regroup<F: Scalar>(x: &Tensor<F>, sequences: usize) -> Result<Tensor<F>> {
    let [n, len, ch] = x.shape();
    if len != 1 || sequences == 0 || n % sequences != 0 {
        return Err(Error::Shape(format!(
            "cannot regroup {n} windows of length {len} into {sequences} sequences"
        )));
    }
    Ok(x.clone().reshape(sequences, n / sequences, ch))
}

/// Inverted dropout applied to a flat slice; exposed for tests of the layer semantics.
pub fn dropout<F: Scalar>(x: &[F], rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<F>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let scale = F::of(1.0 / (1.0 - rate));
    Ok(x.iter().map(|&v| if rng.random::<f64>() < rate { F::zero() } else { v * scale }).collect())
}

/// Additive zero-mean Gaussian noise in training mode, identity otherwise.
pub fn gaussian_noise<F: Scalar>(x: &[F], std: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<F>> {
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std {std}")));
    }
    if mode == Mode::Infer || std == 0.0 {
        return Ok(x.to_vec());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(x.iter().map(|&v| v + F::of(normal.sample(rng))).collect())
}
