//! Hidden-feature extraction and exact t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::window_rows;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Tensor};
use crate::Label;

/// Width of the feature vector the embedding network exposes.
pub const FEATURE_DIM: usize = 64;
const FEATURE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// `len × dim`, row-major.
    pub vectors: Vec<f32>,
    pub dim: usize,
    pub labels: Vec<Label>,
    pub sample_indices: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Layer index of the `Flatten` that follows the feature block.
fn feature_cut(net: &Network<f32>) -> Result<usize> {
    let spec = net.spec();
    let cut = spec
        .layers
        .iter()
        .position(|l| *l == LayerSpec::Flatten)
        .ok_or_else(|| Error::Shape("network has no flatten stage".into()))?;
    let (len, ch) = if cut == 0 { (spec.window_samples, spec.in_channels) } else { spec.shapes()?[cut - 1] };
    if len != 1 || ch != FEATURE_DIM {
        return Err(Error::Shape(format!(
            "feature stage is {len} x {ch}, expected 1 x {FEATURE_DIM} (train with the embedding network)"
        )));
    }
    Ok(cut)
}

/// Feature vectors at every `stride`-th sample, with the reference label at
/// each center.
pub fn extract_features(net: &Network<f32>, channels: &[&[f32]], labels: &[Label], stride: usize) -> Result<FeatureSet> {
    let spec = net.spec();
    if channels.len() != spec.in_channels {
        return Err(Error::Shape(format!("network expects {} channels, got {}", spec.in_channels, channels.len())));
    }
    let n = labels.len();
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::LengthMismatch(n, channels[0].len()));
    }
    if stride == 0 || n == 0 {
        return Err(Error::InvalidArgument("stride and recording length must be positive".into()));
    }
    let cut = feature_cut(net)?;
    let (w, c) = (spec.window_samples, spec.in_channels);
    let centers: Vec<usize> = (0..n).step_by(stride).collect();
    let parts: Vec<Vec<f32>> = centers
        .chunks(FEATURE_BATCH)
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * w * c);
            for &s in chunk {
                data.extend(window_rows(channels, s, w)?);
            }
            Ok(net.infer_layers(Tensor::from_vec(chunk.len(), w, c, data), 0..cut, chunk.len())?.into_data())
        })
        .collect::<Result<_>>()?;
    Ok(FeatureSet {
        vectors: parts.concat(),
        dim: FEATURE_DIM,
        labels: centers.iter().map(|&s| labels[s]).collect(),
        sample_indices: centers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / exaggeration / 4, min(50, 2n))`; a fixed large
    /// rate diverges on very small point sets.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum_switch: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `n × 2`, row-major.
    pub coords: Vec<f64>,
    pub kl_initial: f64,
    pub kl_final: f64,
}

const PERPLEXITY_TOL: f64 = 1e-4;
const P_FLOOR: f64 = 1e-12;

fn squared_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &x[i * d..(i + 1) * d];
        for (j, r) in row.iter_mut().enumerate() {
            *r = xi.iter().zip(&x[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    out
}

/// Conditional row `p_{j|i}` for precision `beta`; returns the row and its
/// Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    // Shift by the smallest off-diagonal distance for numerical range.
    let dmin = dist.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-(v - dmin) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let h = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, h)
}

/// Per-point conditional affinities whose perplexity `exp(H)` matches the
/// target within 1e-4, found by bisection on the Gaussian precision.
pub fn conditional_affinities(x: &[f64], n: usize, d: usize, perplexity: f64) -> Result<Vec<f64>> {
    if n < 2 || x.len() != n * d {
        return Err(Error::InvalidArgument("t-SNE needs at least 2 points of equal dimension".into()));
    }
    if !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(Error::InvalidArgument(format!("perplexity {perplexity} must be in (1, {n})")));
    }
    let dist = squared_distances(x, n, d);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut best = conditional_row(row, i, beta);
            for _ in 0..200 {
                let perp = best.1.exp();
                if (perp - perplexity).abs() < PERPLEXITY_TOL {
                    break;
                }
                // Higher precision means lower entropy.
                if perp > perplexity {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                best = conditional_row(row, i, beta);
            }
            best.0
        })
        .collect();
    Ok(rows.concat())
}

/// `P = (P_cond + P_condᵀ) / 2n`, floored at 1e-12.
pub fn joint_affinities(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
        }
    }
    p
}

/// Student-t numerators `1 / (1 + |y_i - y_j|²)` (zero diagonal) and their sum.
fn student_t(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, r) in row.iter_mut().enumerate() {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                *r = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let sum = num.par_chunks(n).map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>().iter().sum();
    (num, sum)
}

/// `KL(P || Q)` over off-diagonal pairs.
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (num, sum) = student_t(y, n);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / sum).max(P_FLOOR);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE of `n` points of dimension `d` into 2D.
pub fn tsne(x: &[f64], n: usize, d: usize, cfg: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let cond = conditional_affinities(x, n, d, cfg.perplexity)?;
    let p = joint_affinities(&cond, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let kl_initial = kl_divergence(&p, &y, n);
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    let lr = cfg.learning_rate.unwrap_or((n as f64 / cfg.exaggeration / 4.0).max((2.0 * n as f64).min(50.0)));

    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { 0.5 } else { 0.8 };
        let (num, sum) = student_t(&y, n);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = num[i * n + j];
                    let coef = 4.0 * (exag * p[i * n + j] - w / sum) * w;
                    g[0] += coef * (y[2 * i] - y[2 * j]);
                    g[1] += coef * (y[2 * i + 1] - y[2 * j + 1]);
                }
                g
            })
            .collect();
        for k in 0..2 * n {
            let g = grad[k / 2][k % 2];
            gains[k] = if (g > 0.0) != (velocity[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = f64::max(gains[k], 0.01);
            velocity[k] = momentum * velocity[k] - lr * gains[k] * g;
            y[k] += velocity[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }
    }
    let kl_final = kl_divergence(&p, &y, n);
    Ok(TsneResult { coords: y, kl_initial, kl_final })
}

/// `x,y,label,sample_index` rows.
pub fn format_embedding(coords: &[f64], features: &FeatureSet) -> String {
    let mut out = String::from("x,y,label,sample_index\n");
    for (i, (l, s)) in features.labels.iter().zip(&features.sample_indices).enumerate() {
        out.push_str(&format!("{:.6},{:.6},{l},{s}\n", coords[2 * i], coords[2 * i + 1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architectures::build_cnn_embedding;
    use rand::Rng;

    fn dist(c: &[f64], a: usize, b: usize) -> f64 {
        ((c[2 * a] - c[2 * b]).powi(2) + (c[2 * a + 1] - c[2 * b + 1]).powi(2)).sqrt()
    }

    #[test]
    fn coincident_pair_stays_closer() {
        let x = [0.0, 0.0, 0.0, 0.0, 3.0, 4.0];
        let cfg = TsneConfig { perplexity: 1.5, iterations: 300, ..Default::default() };
        for seed in 0..10 {
            let r = tsne(&x, 3, 2, &cfg, seed).unwrap();
            assert!(dist(&r.coords, 0, 1) < dist(&r.coords, 0, 2), "seed {seed}");
            assert!(r.kl_final < r.kl_initial);
            assert!(dist(&r.coords, 0, 1) < dist(&r.coords, 1, 2), "seed {seed}");
        }
    }

    fn clusters(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).flat_map(|i| {
            let c = (i % 3) as f64 * 5.0;
            (0..5).map(|_| c + rng.random_range(-1.0..1.0)).collect::<Vec<_>>()
        }).collect()
    }

    #[test]
    fn affinities_hit_perplexity_and_are_symmetric() {
        let n = 60;
        let x = clusters(n, 1);
        let cond = conditional_affinities(&x, n, 5, 10.0).unwrap();
        for i in 0..n {
            let row = &cond[i * n..(i + 1) * n];
            let h = -row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - 10.0).abs() < 1e-4);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let p = joint_affinities(&cond, n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(p[i * n + j], p[j * n + i]);
                assert!(p[i * n + j] > 0.0);
            }
        }
    }

    #[test]
    fn descent_reduces_kl_and_is_seeded() {
        let n = 45;
        let x = clusters(n, 2);
        let cfg = TsneConfig { perplexity: 10.0, iterations: 400, ..Default::default() };
        let a = tsne(&x, n, 5, &cfg, 7).unwrap();
        let b = tsne(&x, n, 5, &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coords.len(), 2 * n);
        assert!(a.kl_final < a.kl_initial);
    }

    #[test]
    fn perplexity_must_be_below_n() {
        assert!(tsne(&[0.0; 8], 4, 2, &TsneConfig::default(), 0).is_err());
    }

    #[test]
    fn features_have_width_64_at_strided_centers() {
        let net = Network::<f32>::new(build_cnn_embedding().unwrap(), 0).unwrap();
        let n = 450;
        let chans = vec![vec![0.1f32; n], vec![-0.2f32; n], vec![0.05f32; n]];
        let refs: Vec<&[f32]> = chans.iter().map(|c| c.as_slice()).collect();
        let labels = vec![Label::W; n];
        let f = extract_features(&net, &refs, &labels, 100).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(f.vectors.len(), 5 * 64);
        assert_eq!(f.sample_indices, vec![0, 100, 200, 300, 400]);
        for k in 1..5 {
            assert_eq!(&f.vectors[k * 64..(k + 1) * 64], &f.vectors[..64]);
        }
        let plain = Network::<f32>::new(crate::architectures::build_cnn(2, 3).unwrap(), 0).unwrap();
        assert!(matches!(extract_features(&plain, &refs, &labels, 100), Err(Error::Shape(_))));
    }
}
