//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{weighted_cross_entropy, Mode, Network, Tensor};
use crate::error::Result;

/// A labelled batch for the scalar loss used by the checks.
pub struct Probe {
    pub input: Tensor<f64>,
    pub sequences: usize,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
    /// Seed for noise and dropout masks, reused for every evaluation.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries whose `±h` evaluations flipped a ReLU or max-pool decision;
    /// a central difference across a kink is meaningless, so they are left
    /// out of `checked`.
    pub skipped_kinks: usize,
}

/// Gradient magnitude below which errors are judged in absolute terms.
///
/// Central differences at `h = 1e-5` carry about `1e-10` of rounding noise,
/// which is all a structurally zero gradient (a conv bias feeding batch
/// normalization) ever shows.
pub const SCALE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Loss plus the activation pattern of every piecewise-linear layer.
fn loss(net: &mut Network<f64>, probe: &Probe) -> Result<(f64, Vec<Vec<bool>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let out = net.forward(&probe.input, Mode::Train, probe.sequences, &mut rng)?;
    let pattern = net.layers().iter().filter_map(|l| l.switch_pattern()).collect();
    Ok((weighted_cross_entropy(&out, &probe.targets, &probe.weights)?.0, pattern))
}

fn record(report: &mut CheckReport, analytic: f64, up: (f64, Vec<Vec<bool>>), down: (f64, Vec<Vec<bool>>), h: f64) {
    if up.1 != down.1 {
        report.skipped_kinks += 1;
        return;
    }
    let numeric = (up.0 - down.0) / (2.0 * h);
    report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
    report.checked += 1;
}

/// Compares backward-pass gradients with central differences of step `h` for
/// up to `per_tensor` randomly chosen entries of every trainable tensor.
pub fn check_network(net: &mut Network<f64>, probe: &Probe, h: f64, per_tensor: usize, seed: u64) -> Result<CheckReport> {
    net.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let out = net.forward(&probe.input, Mode::Train, probe.sequences, &mut rng)?;
    let (_, gout) = weighted_cross_entropy(&out, &probe.targets, &probe.weights)?;
    net.backward(&gout)?;
    let analytic: Vec<Vec<f64>> = net.params().map(|p| p.grad.clone()).collect();
    let trainable: Vec<bool> = net.params().map(|p| p.trainable).collect();

    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        if !trainable[pi] {
            continue;
        }
        let n = grads.len();
        let idx: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut pick, n, per_tensor).into_vec() };
        for i in idx {
            let orig = net.params().nth(pi).unwrap().value[i];
            net.params_mut().nth(pi).unwrap().value[i] = orig + h;
            let up = loss(net, probe)?;
            net.params_mut().nth(pi).unwrap().value[i] = orig - h;
            let down = loss(net, probe)?;
            net.params_mut().nth(pi).unwrap().value[i] = orig;
            record(&mut report, grads[i], up, down, h);
        }
    }
    net.clear_caches();
    Ok(report)
}

/// Same check for the gradient with respect to the network input.
pub fn check_input(net: &mut Network<f64>, probe: &Probe, h: f64, count: usize, seed: u64) -> Result<CheckReport> {
    net.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let out = net.forward(&probe.input, Mode::Train, probe.sequences, &mut rng)?;
    let (_, gout) = weighted_cross_entropy(&out, &probe.targets, &probe.weights)?;
    let gin = net.backward(&gout)?;
    let n = probe.input.data().len();
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if n <= count { (0..n).collect() } else { sample(&mut pick, n, count).into_vec() };
    let mut report = CheckReport::default();
    let mut shifted = Probe {
        input: probe.input.clone(),
        sequences: probe.sequences,
        targets: probe.targets.clone(),
        weights: probe.weights.clone(),
        seed: probe.seed,
    };
    for i in idx {
        let orig = probe.input.data()[i];
        shifted.input.data_mut()[i] = orig + h;
        let up = loss(net, &shifted)?;
        shifted.input.data_mut()[i] = orig - h;
        let down = loss(net, &shifted)?;
        shifted.input.data_mut()[i] = orig;
        record(&mut report, gin.data()[i], up, down, h);
    }
    net.clear_caches();
    Ok(report)
}
