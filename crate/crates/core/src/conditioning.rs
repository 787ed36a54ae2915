//! Fourier band-pass filtering and the per-family input scalings.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::Recording;

/// Pass band of the Fourier filter. Edge frequencies are kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub rate_hz: f64,
}

impl BandSpec {
    /// The 0.5–45 Hz conditioning band.
    pub fn standard(rate_hz: f64) -> Self {
        Self { low_hz: 0.5, high_hz: 45.0, rate_hz }
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.low_hz && self.low_hz < self.high_hz && self.high_hz < self.rate_hz / 2.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "band {}-{} Hz invalid at {} Hz",
                self.low_hz, self.high_hz, self.rate_hz
            )))
        }
    }
}

/// Whole-signal DFT, zero every bin outside `[low, high]` (both signs), inverse DFT.
///
/// Lengths need not be powers of two; no padding or tapering is applied.
pub fn fourier_bandpass(signal: &[f64], band: &BandSpec) -> Result<Vec<f64>> {
    band.validate()?;
    if signal.len() < 2 {
        return Err(Error::InvalidArgument("band-pass needs at least 2 samples".into()));
    }
    if let Some(i) = signal.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let bin_hz = band.rate_hz / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        // Bin k and bin n-k carry the same |frequency|.
        let f = k.min(n - k) as f64 * bin_hz;
        if f < band.low_hz || f > band.high_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

/// Band-passes every channel of a recording with the standard band.
pub fn condition_recording(rec: &Recording) -> Result<Recording> {
    let band = BandSpec::standard(rec.rate_hz);
    rec.map_channels(|s| fourier_bandpass(s, &band))
}

/// CNN input scaling: `clamp(x / 100, -1, 1)`.
pub fn normalize_cnn(signal: &[f64]) -> Vec<f32> {
    signal.iter().map(|&x| (x / 100.0).clamp(-1.0, 1.0) as f32).collect()
}

/// CNN-LSTM input scaling: `clamp((x + 100) / 200, 0, 1)`.
pub fn normalize_lstm(signal: &[f64]) -> Vec<f32> {
    signal.iter().map(|&x| ((x + 100.0) / 200.0).clamp(0.0, 1.0) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 200.0).sin()).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn passband_sine_is_preserved() {
        let x = sine(10.0, 2000, 50.0);
        let y = fourier_bandpass(&x, &BandSpec::standard(200.0)).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(max_abs_diff(&x, &y) < 1e-9);
    }

    #[test]
    fn dc_is_removed() {
        let y = fourier_bandpass(&[30.0; 1000], &BandSpec::standard(200.0)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn stopband_sine_is_annihilated() {
        let y = fourier_bandpass(&sine(60.0, 2000, 50.0), &BandSpec::standard(200.0)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn edge_bins_survive() {
        // 2000 samples at 200 Hz: 0.1 Hz bins, so 0.5 and 45 Hz are exact bins.
        for f in [0.5, 45.0] {
            let x = sine(f, 2000, 10.0);
            let y = fourier_bandpass(&x, &BandSpec::standard(200.0)).unwrap();
            assert!(max_abs_diff(&x, &y) < 1e-9, "{f} Hz");
        }
        let y = fourier_bandpass(&sine(0.4, 2000, 10.0), &BandSpec::standard(200.0)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn odd_length_works() {
        let x = sine(10.0, 2001, 1.0);
        assert_eq!(fourier_bandpass(&x, &BandSpec::standard(200.0)).unwrap().len(), 2001);
    }

    #[test]
    fn errors() {
        let band = BandSpec::standard(200.0);
        assert!(fourier_bandpass(&[1.0], &band).is_err());
        assert!(matches!(fourier_bandpass(&[1.0, f64::NAN, 2.0], &band), Err(Error::NonFinite(1))));
        assert!(BandSpec { low_hz: 0.5, high_hz: 120.0, rate_hz: 200.0 }.validate().is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_cnn(&[250.0, -50.0, 0.0]), vec![1.0, -0.5, 0.0]);
        assert_eq!(normalize_lstm(&[100.0, -100.0, 0.0]), vec![1.0, 0.0, 0.5]);
    }

    proptest! {
        #[test]
        fn normalizations_are_monotone_and_bounded(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c = normalize_cnn(&[lo, hi]);
            prop_assert!(c[0] <= c[1] && (-1.0..=1.0).contains(&c[0]) && (-1.0..=1.0).contains(&c[1]));
            let l = normalize_lstm(&[lo, hi]);
            prop_assert!(l[0] <= l[1] && (0.0..=1.0).contains(&l[0]) && (0.0..=1.0).contains(&l[1]));
        }

        #[test]
        fn bandpass_is_linear(
            x in proptest::collection::vec(-100f64..100.0, 64),
            y in proptest::collection::vec(-100f64..100.0, 64),
            a in -3f64..3.0,
            b in -3f64..3.0,
        ) {
            let band = BandSpec::standard(200.0);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = fourier_bandpass(&mix, &band).unwrap();
            let fx = fourier_bandpass(&x, &band).unwrap();
            let fy = fourier_bandpass(&y, &band).unwrap();
            let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(p, q)| a * p + b * q).collect();
            let norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-9 * norm);
        }

        #[test]
        fn bandpass_is_idempotent(x in proptest::collection::vec(-100f64..100.0, 100)) {
            let band = BandSpec::standard(200.0);
            let once = fourier_bandpass(&x, &band).unwrap();
            let twice = fourier_bandpass(&once, &band).unwrap();
            prop_assert!(max_abs_diff(&once, &twice) < 1e-9);
        }
    }
}
