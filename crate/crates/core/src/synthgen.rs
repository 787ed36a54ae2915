//! Synthetic MWT-like recordings with exact ground truth.
//!
//! Wake spans carry a 10 Hz (alpha) rhythm, MSE spans a 5 Hz (theta) rhythm.
//! MSEc spans mix both and ED spans sit in between at 7 Hz. Both EOG channels
//! carry slow 0.3 Hz waves of opposite polarity during every MSE and in the
//! two seconds before it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::Channel;
use crate::{Label, LabelTrack, Recording, E1M1, E2M1, O1M2, O2M1, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub id: String,
    pub duration_s: f64,
    /// Target fraction of samples for MSE, MSEc and ED; W fills the rest.
    pub mse_fraction: f64,
    pub msec_fraction: f64,
    pub ed_fraction: f64,
    /// Duration band of every non-wake span.
    pub min_span_s: f64,
    pub max_span_s: f64,
    /// Shortest wake stretch between two non-wake spans.
    pub min_gap_s: f64,
    /// Standard deviation of the additive white noise.
    pub noise_uv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            id: "synth".into(),
            duration_s: 300.0,
            mse_fraction: 0.10,
            msec_fraction: 0.03,
            ed_fraction: 0.04,
            min_span_s: 1.0,
            max_span_s: 15.0,
            min_gap_s: 2.0,
            noise_uv: 6.0,
        }
    }
}

const EOG_LEAD_S: f64 = 2.0;

/// Splits `budget` samples into spans of `min..=max` samples.
fn split_budget(budget: usize, min: usize, max: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let lo = budget.div_ceil(max);
    let hi = budget / min;
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "{budget} samples cannot be cut into spans of {min}..={max}"
        )));
    }
    let k = rng.random_range(lo..=hi);
    let mut spans = vec![min; k];
    let mut extra = budget - k * min;
    // Hand out the surplus in random chunks, respecting the cap.
    while extra > 0 {
        let i = rng.random_range(0..k);
        let room = max - spans[i];
        if room == 0 {
            continue;
        }
        let add = rng.random_range(1..=room.min(extra));
        spans[i] += add;
        extra -= add;
    }
    Ok(spans)
}

/// Cuts `total` into `parts` pieces, each at least `min`.
fn split_gaps(total: usize, parts: usize, min: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut gaps = vec![min; parts];
    let spare = total - parts * min;
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.random_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    for (g, &c) in gaps.iter_mut().zip(cuts.iter().chain(std::iter::once(&spare))) {
        *g += c - prev;
        prev = c;
    }
    gaps
}

/// Builds the label sequence: shuffled non-wake spans separated by wake gaps.
fn layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Label>> {
    let rate = SAMPLE_RATE_HZ;
    let n = (cfg.duration_s * rate).round() as usize;
    let fracs = [cfg.mse_fraction, cfg.msec_fraction, cfg.ed_fraction];
    if n == 0
        || fracs.iter().any(|f| !(0.0..1.0).contains(f))
        || fracs.iter().sum::<f64>() >= 1.0
        || !(cfg.min_span_s > 0.0 && cfg.min_span_s <= cfg.max_span_s)
        || cfg.min_gap_s < 0.0
        || !(cfg.noise_uv >= 0.0)
    {
        return Err(Error::InvalidArgument(format!("infeasible synthetic configuration {cfg:?}")));
    }
    let min = (cfg.min_span_s * rate).round() as usize;
    let max = (cfg.max_span_s * rate).round() as usize;
    let mut spans: Vec<(Label, usize)> = Vec::new();
    for (label, f) in [Label::Mse, Label::MseCandidate, Label::Drowsy].into_iter().zip(fracs) {
        let budget = (f * n as f64).round() as usize;
        spans.extend(split_budget(budget, min, max, rng)?.into_iter().map(|len| (label, len)));
    }
    spans.shuffle(rng);
    let busy: usize = spans.iter().map(|s| s.1).sum();
    let gap_min = (cfg.min_gap_s * rate).round() as usize;
    let parts = spans.len() + 1;
    if busy + parts * gap_min > n {
        return Err(Error::InvalidArgument("not enough wake time to separate the spans".into()));
    }
    let gaps = split_gaps(n - busy, parts, gap_min, rng);
    let mut labels = Vec::with_capacity(n);
    for (i, gap) in gaps.iter().enumerate() {
        labels.extend(std::iter::repeat_n(Label::W, *gap));
        if let Some(&(l, len)) = spans.get(i) {
            labels.extend(std::iter::repeat_n(l, len));
        }
    }
    Ok(labels)
}

/// One recording with channels O1M2, O2M1, E1M1, E2M1 in µV.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<(Recording, LabelTrack)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = layout(cfg, &mut rng)?;
    let n = labels.len();
    let rate = SAMPLE_RATE_HZ;
    let noise = Normal::new(0.0, cfg.noise_uv.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tau = std::f64::consts::TAU;

    // Per-span rhythm parameters, redrawn at every label change.
    let mut eeg = [vec![0.0; n], vec![0.0; n]];
    let mut start = 0;
    while start < n {
        let l = labels[start];
        let end = labels[start..].iter().position(|&x| x != l).map_or(n, |p| start + p);
        let comps: Vec<(f64, f64)> = match l {
            Label::W => vec![(10.0, rng.random_range(30.0..45.0))],
            Label::Mse => vec![(5.0, rng.random_range(40.0..55.0))],
            Label::MseCandidate => vec![(5.0, rng.random_range(20.0..30.0)), (10.0, rng.random_range(15.0..25.0))],
            Label::Drowsy => vec![(7.0, rng.random_range(25.0..40.0))],
        };
        for ch in eeg.iter_mut() {
            let gain = rng.random_range(0.85..1.15);
            let phases: Vec<f64> = comps.iter().map(|_| rng.random_range(0.0..tau)).collect();
            for (i, v) in ch[start..end].iter_mut().enumerate() {
                let t = i as f64 / rate;
                *v = comps.iter().zip(&phases).map(|(&(f, a), &p)| gain * a * (tau * f * t + p).sin()).sum::<f64>();
            }
        }
        start = end;
    }
    for ch in eeg.iter_mut() {
        ch.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }

    // Slow eye movements: mask covering each MSE and its lead-in.
    let lead = (EOG_LEAD_S * rate).round() as usize;
    let mut mask = vec![false; n];
    for (i, &l) in labels.iter().enumerate() {
        if l == Label::Mse && (i == 0 || labels[i - 1] != Label::Mse) {
            mask[i.saturating_sub(lead)..i].fill(true);
        }
        if l == Label::Mse {
            mask[i] = true;
        }
    }
    let sem_amp = rng.random_range(50.0..65.0);
    let sem_phase = rng.random_range(0.0..tau);
    let mut eog = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let slow = if mask[i] { sem_amp * (tau * 0.3 * i as f64 / rate + sem_phase).sin() } else { 0.0 };
        eog[0][i] = slow + noise.sample(&mut rng);
        eog[1][i] = -slow + noise.sample(&mut rng);
    }

    let [o1, o2] = eeg;
    let [e1, e2] = eog;
    let channels = vec![
        Channel { name: O1M2.into(), samples: o1 },
        Channel { name: O2M1.into(), samples: o2 },
        Channel { name: E1M1.into(), samples: e1 },
        Channel { name: E2M1.into(), samples: e2 },
    ];
    Ok((Recording::new(cfg.id.clone(), rate, channels)?, LabelTrack::new(labels)))
}

/// `count` recordings named `{prefix}00`, `{prefix}01`, ... with seeds
/// `seed`, `seed + 1`, ...
pub fn generate_corpus(count: usize, base: &SynthConfig, prefix: &str, seed: u64) -> Result<Vec<(Recording, LabelTrack)>> {
    (0..count)
        .map(|i| {
            let cfg = SynthConfig { id: format!("{prefix}{i:02}"), ..base.clone() };
            generate(&cfg, seed.wrapping_add(i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::episodes_from_labels;

    #[test]
    fn reproducible() {
        let cfg = SynthConfig { duration_s: 60.0, ..Default::default() };
        let (a, la) = generate(&cfg, 5).unwrap();
        let (b, lb) = generate(&cfg, 5).unwrap();
        assert_eq!(la, lb);
        for (x, y) in a.channels().iter().zip(b.channels()) {
            assert_eq!(x.samples, y.samples);
        }
        let (_, lc) = generate(&cfg, 6).unwrap();
        assert_ne!(la, lc);
    }

    #[test]
    fn fractions_and_duration_band() {
        let cfg = SynthConfig { duration_s: 1800.0, ..Default::default() };
        let (rec, labels) = generate(&cfg, 1).unwrap();
        assert_eq!(rec.duration_samples(), 360_000);
        let n = labels.len() as f64;
        for (l, f) in [(Label::Mse, 0.10), (Label::MseCandidate, 0.03), (Label::Drowsy, 0.04)] {
            let got = labels.labels.iter().filter(|&&x| x == l).count() as f64 / n;
            assert!((got - f).abs() <= 0.02, "{l}: {got}");
        }
        for e in episodes_from_labels(&labels.labels) {
            if e.class == Label::Mse {
                assert!((200..=3000).contains(&e.len()), "{}", e.len());
            }
        }
    }

    #[test]
    fn mse_spectrum_peaks_at_theta() {
        // Direct DFT magnitude over 0.25 Hz steps inside the longest MSE span.
        let (rec, labels) = generate(&SynthConfig { duration_s: 300.0, ..Default::default() }, 2).unwrap();
        let eps = episodes_from_labels(&labels.labels);
        let e = eps.iter().filter(|e| e.class == Label::Mse).max_by_key(|e| e.len()).unwrap();
        let x = &rec.channel(O1M2).unwrap()[e.start_sample..e.end_sample_exclusive];
        let power = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let ph = std::f64::consts::TAU * f * i as f64 / 200.0;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re * re + im * im
        };
        let peak = (2..=160).map(|k| k as f64 * 0.25).max_by(|a, b| power(*a).total_cmp(&power(*b))).unwrap();
        assert!((peak - 5.0).abs() <= 0.5, "peak at {peak} Hz");
    }

    #[test]
    fn infeasible_configs() {
        let bad = SynthConfig { duration_s: 10.0, mse_fraction: 0.5, min_gap_s: 5.0, ..Default::default() };
        assert!(generate(&bad, 0).is_err());
        let bad = SynthConfig { min_span_s: 20.0, ..Default::default() };
        assert!(generate(&bad, 0).is_err());
        let bad = SynthConfig { mse_fraction: 0.6, msec_fraction: 0.3, ed_fraction: 0.2, ..Default::default() };
        assert!(generate(&bad, 0).is_err());
    }

    #[test]
    fn eog_leads_mse() {
        let (rec, labels) = generate(&SynthConfig { duration_s: 120.0, noise_uv: 0.0, ..Default::default() }, 3).unwrap();
        let e1 = rec.channel(E1M1).unwrap();
        let e2 = rec.channel(E2M1).unwrap();
        let first = labels.labels.iter().position(|&l| l == Label::Mse).unwrap();
        let before = &e1[first - 400..first];
        assert!(before.iter().any(|v| v.abs() > 1.0));
        assert!(e1.iter().zip(e2).all(|(a, b)| (a + b).abs() < 1e-9));
        let quiet = labels.labels[..first.saturating_sub(400)].iter().all(|&l| l == Label::W);
        if quiet {
            assert!(e1[..first - 400].iter().all(|v| v.abs() < 1e-12));
        }
    }
}
