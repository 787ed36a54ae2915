//! Patient-level splits, window extraction, class weighting and batch
//! sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::architectures::{lstm_window_count, LSTM_STRIDE_SAMPLES, LSTM_WINDOW_SAMPLES};
use crate::conditioning::{normalize_cnn, normalize_lstm};
use crate::error::{Error, Result};
use crate::nn::{Family, Tensor};
use crate::{Label, LabelTrack, Recording, E1M1, E2M1, O1M2, O2M1};

/// Disjoint train/validation/test recording ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Shuffles `ids` under `seed` and cuts it by `fractions`.
///
/// Part sizes use largest remainders: each part gets `floor(f * N)`, and the
/// leftover recordings go to the parts with the largest fractional parts
/// (ties in train, validation, test order). 76 ids at 70/15/15 give 53/12/11.
pub fn split_by_patient(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<SplitPlan> {
    use rand::SeedableRng;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("no recording ids to split".into()));
    }
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let n = ids.len();
    let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
    // Nudge before flooring so 0.7 * 76 = 53.199999... still floors to 53.
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids = shuffled.split_off(sizes[0] + sizes[1]);
    let val_ids = shuffled.split_off(sizes[0]);
    Ok(SplitPlan { train_ids: shuffled, val_ids, test_ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weights inversely proportional to class frequency, mean 1.
    Inverse,
    Uniform,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inverse" => Ok(Weighting::Inverse),
            "uniform" => Ok(Weighting::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown weighting `{s}` (valid: inverse, uniform)"))),
        }
    }
}

/// Loss weight per class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn weight(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// Class weights from integer class codes in `0..n_classes`.
pub fn class_weights_from_codes(codes: &[usize], n_classes: usize, scheme: Weighting) -> Result<ClassWeights> {
    if scheme == Weighting::Uniform {
        return Ok(ClassWeights(vec![1.0; n_classes]));
    }
    let mut counts = vec![0usize; n_classes];
    for &c in codes {
        counts[c] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        let name = if n_classes == 4 { Label::ALL[k].name().to_string() } else { k.to_string() };
        return Err(Error::AbsentClass(name));
    }
    let total = codes.len() as f64;
    let inv: Vec<f64> = counts.iter().map(|&c| total / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / n_classes as f64;
    Ok(ClassWeights(inv.iter().map(|w| w / mean).collect()))
}

/// Weights for the four scoring classes over a concatenated label track.
pub fn class_weights(labels: &[Label], scheme: Weighting) -> Result<ClassWeights> {
    let codes: Vec<usize> = labels.iter().map(|l| l.code()).collect();
    class_weights_from_codes(&codes, 4, scheme)
}

/// Maps a 4-class label to the CNN-LSTM target: 1 for MSE, 0 otherwise.
pub fn binary_target(label: Label) -> usize {
    usize::from(label == Label::Mse)
}

/// `window` rows starting `floor(window / 2)` before `center`, with
/// out-of-range samples replaced by the nearest edge sample. Output is
/// `[time][channel]`.
pub fn window_rows<T: Copy>(channels: &[&[T]], center: usize, window: usize) -> Result<Vec<T>> {
    let n = channels.first().map_or(0, |c| c.len());
    if n == 0 || window == 0 {
        return Err(Error::InvalidArgument("empty recording or zero-length window".into()));
    }
    if center >= n {
        return Err(Error::InvalidArgument(format!("center {center} outside recording of {n} samples")));
    }
    let mut out = Vec::with_capacity(window * channels.len());
    let start = center as isize - (window / 2) as isize;
    for k in 0..window as isize {
        let idx = (start + k).clamp(0, n as isize - 1) as usize;
        for ch in channels {
            out.push(ch[idx]);
        }
    }
    Ok(out)
}

/// Window of every channel of a recording around `center`.
pub fn window_at(rec: &Recording, center: usize, window_samples: usize) -> Result<Vec<f64>> {
    let chans: Vec<&[f64]> = rec.channels().iter().map(|c| c.samples.as_slice()).collect();
    window_rows(&chans, center, window_samples)
}

/// Which inputs a CNN sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// One EEG derivation stacked with both EOG channels.
    Stacked,
    /// A single EEG derivation.
    SingleEeg,
}

impl ChannelMode {
    pub fn for_channels(n: usize) -> Result<Self> {
        match n {
            3 => Ok(ChannelMode::Stacked),
            1 => Ok(ChannelMode::SingleEeg),
            _ => Err(Error::InvalidArgument(format!("{n} input channels"))),
        }
    }

    pub fn n_channels(self) -> usize {
        match self {
            ChannelMode::Stacked => 3,
            ChannelMode::SingleEeg => 1,
        }
    }
}

/// A conditioned, labelled recording with network-scaled channels.
#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub id: String,
    /// `[O1M2, O2M1]`.
    pub eeg: [Vec<f32>; 2],
    /// `[E1M1, E2M1]`.
    pub eog: [Vec<f32>; 2],
    pub labels: Vec<Label>,
}

impl PreparedRecording {
    /// Scales the scoring channels of a conditioned recording for `family`.
    pub fn new(rec: &Recording, labels: &LabelTrack, family: Family) -> Result<Self> {
        let n = rec.duration_samples();
        if labels.len() != n {
            return Err(Error::LengthMismatch(n, labels.len()));
        }
        let scale = |name: &str| -> Result<Vec<f32>> {
            let s = rec.channel(name)?;
            Ok(match family {
                Family::Cnn => normalize_cnn(s),
                Family::CnnLstm => normalize_lstm(s),
            })
        };
        Ok(Self {
            id: rec.id.clone(),
            eeg: [scale(O1M2)?, scale(O2M1)?],
            eog: [scale(E1M1)?, scale(E2M1)?],
            labels: labels.labels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Channel slices for the given mode and EEG derivation (0 = O1M2).
    pub fn inputs(&self, mode: ChannelMode, derivation: usize) -> Vec<&[f32]> {
        match mode {
            ChannelMode::Stacked => vec![&self.eeg[derivation], &self.eog[0], &self.eog[1]],
            ChannelMode::SingleEeg => vec![&self.eeg[derivation]],
        }
    }

    /// Evaluation input: O1M2 (plus EOGs in stacked mode), `[time][channel]`.
    pub fn eval_input(&self, mode: ChannelMode) -> Vec<f32> {
        let chans = self.inputs(mode, 0);
        let mut out = Vec::with_capacity(self.len() * chans.len());
        for i in 0..self.len() {
            out.extend(chans.iter().map(|c| c[i]));
        }
        out
    }
}

/// A training batch plus where each element came from.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// `(batch, window, channels)`, already scaled.
    pub inputs: Tensor<f32>,
    /// One target per output row.
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(recording index, center sample, EEG derivation)` per batch element
    /// (per window for CNN-LSTM batches).
    pub sources: Vec<(usize, usize, usize)>,
    /// Number of sequences (CNN-LSTM) or batch elements (CNN).
    pub sequences: usize,
}

/// Draws windows without repetition within one training iteration.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    offsets: Vec<usize>,
    order: Vec<u32>,
    cursor: usize,
}

impl BatchSampler {
    /// Pool of every `(recording, center)` pair of `recs`.
    pub fn new(recs: &[PreparedRecording]) -> Result<Self> {
        Self::with_counts(recs.iter().map(|r| r.len()))
    }

    fn with_counts(counts: impl Iterator<Item = usize>) -> Result<Self> {
        let mut offsets = vec![0];
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let total = *offsets.last().unwrap();
        if total == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if total > u32::MAX as usize {
            return Err(Error::InvalidArgument("training pool too large".into()));
        }
        Ok(Self { offsets, order: Vec::new(), cursor: 0 })
    }

    pub fn pool_size(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    /// Reshuffles the pool; every pair becomes available once more.
    pub fn start_iteration(&mut self, rng: &mut ChaCha8Rng) {
        self.order = (0..self.pool_size() as u32).collect();
        self.order.shuffle(rng);
        self.cursor = 0;
    }

    fn take(&mut self, n: usize) -> Result<Vec<(usize, usize)>> {
        if n == 0 || self.remaining() == 0 || n > self.remaining() {
            return Err(Error::SamplerExhausted { requested: n, remaining: self.remaining() });
        }
        let picks = self.order[self.cursor..self.cursor + n]
            .iter()
            .map(|&g| {
                let g = g as usize;
                let r = self.offsets.partition_point(|&o| o <= g) - 1;
                (r, g - self.offsets[r])
            })
            .collect();
        self.cursor += n;
        Ok(picks)
    }

    /// Next CNN batch of up to `batch_size` windows (the final batch of an
    /// iteration may be smaller). In stacked mode with `augment`, each
    /// element's EEG derivation is O1M2 or O2M1 with probability 1/2.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_batch(
        &mut self,
        recs: &[PreparedRecording],
        batch_size: usize,
        window: usize,
        mode: ChannelMode,
        augment: bool,
        weights: &ClassWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<WindowBatch> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let n = batch_size.min(self.remaining().max(1));
        let picks = self.take(n)?;
        let ch = mode.n_channels();
        let mut data = Vec::with_capacity(n * window * ch);
        let mut targets = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        for (r, c) in picks {
            let derivation = if augment && mode == ChannelMode::Stacked { rng.random_range(0..2) } else { 0 };
            let rec = &recs[r];
            data.extend(window_rows(&rec.inputs(mode, derivation), c, window)?);
            targets.push(rec.labels[c].code());
            sources.push((r, c, derivation));
        }
        let w = targets.iter().map(|&t| weights.weight(t)).collect();
        Ok(WindowBatch { inputs: Tensor::from_vec(n, window, ch, data), targets, weights: w, sources, sequences: n })
    }
}

/// Sequence starts for CNN-LSTM training: every start window index whose
/// `seq_len` windows fit inside the recording.
#[derive(Debug, Clone)]
pub struct SequenceSampler {
    inner: BatchSampler,
    seq_len: usize,
    windows: usize,
}

impl SequenceSampler {
    pub fn new(recs: &[PreparedRecording], seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        let mut counts = Vec::with_capacity(recs.len());
        let mut windows = 0;
        for r in recs {
            let k = lstm_window_count(r.len())?;
            windows += k;
            counts.push((k + 1).saturating_sub(seq_len));
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "no training recording holds {seq_len} consecutive windows"
            )));
        }
        Ok(Self { inner: BatchSampler::with_counts(counts.into_iter())?, seq_len, windows })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Total decision windows across the training recordings.
    pub fn total_windows(&self) -> usize {
        self.windows
    }

    pub fn remaining(&self) -> usize {
        self.inner.remaining()
    }

    pub fn start_iteration(&mut self, rng: &mut ChaCha8Rng) {
        self.inner.start_iteration(rng);
    }

    /// `(batch * seq_len, 200, 3)` windows with binary MSE targets at each
    /// window center. EEG derivation is drawn per sequence.
    pub fn sample_batch(
        &mut self,
        recs: &[PreparedRecording],
        batch_size: usize,
        weights: &ClassWeights,
        rng: &mut ChaCha8Rng,
    ) -> Result<WindowBatch> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let n = batch_size.min(self.inner.remaining().max(1));
        let picks = self.inner.take(n)?;
        let (t, w) = (self.seq_len, LSTM_WINDOW_SAMPLES);
        let mut data = Vec::with_capacity(n * t * w * 3);
        let mut targets = Vec::with_capacity(n * t);
        let mut sources = Vec::with_capacity(n * t);
        for (r, first) in picks {
            let derivation = rng.random_range(0..2);
            let rec = &recs[r];
            let chans = rec.inputs(ChannelMode::Stacked, derivation);
            for k in first..first + t {
                let start = k * LSTM_STRIDE_SAMPLES;
                for i in start..start + w {
                    data.extend(chans.iter().map(|c| c[i]));
                }
                let center = start + w / 2;
                targets.push(binary_target(rec.labels[center]));
                sources.push((r, center, derivation));
            }
        }
        let wts = targets.iter().map(|&c| weights.weight(c)).collect();
        Ok(WindowBatch {
            inputs: Tensor::from_vec(n * t, w, 3, data),
            targets,
            weights: wts,
            sources,
            sequences: n,
        })
    }
}
