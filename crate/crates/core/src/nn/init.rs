use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Scalar;
use crate::error::{Error, Result};

/// `n` i.i.d. draws from `N(0, 2 / (fan_in + fan_out))`.
pub(crate) fn glorot_normal<F: Scalar>(n: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Vec<F> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| F::of(normal.sample(rng))).collect()
}

/// Glorot-normal tensor of the given shape. For convolution kernels pass
/// `fan_in = 3 * c_in` and `fan_out = 3 * c_out`.
pub fn glorot_normal_init<F: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<F>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument("Glorot fans must be positive".into()));
    }
    Ok(glorot_normal(shape.iter().product(), fan_in, fan_out, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn variance_mean_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (fi, fo) = (3 * 16, 3 * 32);
        let w: Vec<f64> = glorot_normal_init(&[100_000], fi, fo, &mut rng).unwrap();
        let target = 2.0 / (fi + fo) as f64;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
        let se = (target / w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se);

        let a: Vec<f32> = glorot_normal_init(&[3, 4, 5], 12, 15, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b: Vec<f32> = glorot_normal_init(&[3, 4, 5], 12, 15, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(glorot_normal_init::<f32>(&[2], 0, 1, &mut rng).is_err());
    }
}
