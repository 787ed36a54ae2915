//! Dense per-sample prediction and post-processing.
//!
//! The naive path runs the network on one replicate-padded window per sample.
//! The fast path evaluates the time-local trunk once over the whole padded
//! signal. A valid convolution commutes with shifting its input, so only the
//! pooling layers break sharing: a window starting at offset `s` sees pairs
//! aligned to `s mod 2`. Each pooling layer therefore splits a branch into its
//! even and odd phases. After `P` pools there are `2^P` branches, window `s`
//! lives in branch `s mod 2^P` at position `s >> P`, and the remaining layers
//! run once per window on the gathered trunk rows.

use rayon::prelude::*;

use crate::architectures::{lstm_window_count, LSTM_STRIDE_SAMPLES, LSTM_WINDOW_SAMPLES};
use crate::dataset::window_rows;
use crate::error::{Error, Result};
use crate::evaluation::class_names;
use crate::nn::{LayerSpec, Network, Padding, Tensor};
use crate::Label;

const NAIVE_BATCH: usize = 64;
const ENCODER_BATCH: usize = 256;

/// Per-sample class probabilities and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrack {
    pub n_classes: usize,
    /// `len × n_classes`, row-major.
    pub probs: Vec<f32>,
    pub labels: Vec<usize>,
    /// Samples per independent decision (1 for CNNs, 50 for the CNN-LSTM,
    /// the interval after coarsening).
    pub resolution_samples: usize,
}

/// Index of the largest value; ties go to the lower index.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl PredictionTrack {
    /// Labels are the row-wise argmax of `probs`.
    pub fn from_probs(probs: Vec<f32>, n_classes: usize, resolution_samples: usize) -> Self {
        let labels = probs.chunks_exact(n_classes).map(argmax).collect();
        Self { n_classes, probs, labels, resolution_samples }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    /// Labels as scoring classes; binary tracks map to W / MSE.
    pub fn as_labels(&self) -> Vec<Label> {
        self.labels
            .iter()
            .map(|&c| match self.n_classes {
                2 => if c == 1 { Label::Mse } else { Label::W },
                _ => Label::from_code(c).unwrap_or(Label::W),
            })
            .collect()
    }
}

fn check_channels(net: &Network<f32>, channels: &[&[f32]]) -> Result<usize> {
    let spec = net.spec();
    if channels.len() != spec.in_channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {}",
            spec.in_channels,
            channels.len()
        )));
    }
    let n = channels[0].len();
    if let Some(c) = channels.iter().find(|c| c.len() != n) {
        return Err(Error::LengthMismatch(n, c.len()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty recording".into()));
    }
    Ok(n)
}

/// Runs the network on the window around every sample.
pub fn predict_dense_naive(net: &Network<f32>, channels: &[&[f32]]) -> Result<PredictionTrack> {
    let n = check_channels(net, channels)?;
    let spec = net.spec();
    let (w, c, k) = (spec.window_samples, spec.in_channels, spec.n_classes);
    let mut probs = vec![0.0f32; n * k];
    for (b, out) in probs.chunks_mut(NAIVE_BATCH * k).enumerate() {
        let start = b * NAIVE_BATCH;
        let count = out.len() / k;
        let mut data = Vec::with_capacity(count * w * c);
        for center in start..start + count {
            data.extend(window_rows(channels, center, w)?);
        }
        let y = net.infer(&Tensor::from_vec(count, w, c, data), count)?;
        if y.data().len() != out.len() {
            return Err(Error::Shape("network does not emit one row per window".into()));
        }
        out.copy_from_slice(y.data());
    }
    Ok(PredictionTrack::from_probs(probs, k, 1))
}

/// Where the shared trunk ends and how many pools it contains, or `None`
/// when the network cannot be evaluated by branch splitting.
fn shared_trunk(net: &Network<f32>) -> Option<(usize, usize)> {
    let layers = &net.spec().layers;
    let trunk = net.spec().trunk_len();
    let split = layers[..trunk].iter().rposition(|l| *l == LayerSpec::MaxPool)? + 1;
    let ok = layers[..split]
        .iter()
        .all(|l| !matches!(l, LayerSpec::Conv1d { padding: Padding::Same, .. }));
    let pools = layers[..split].iter().filter(|l| **l == LayerSpec::MaxPool).count();
    ok.then_some((split, pools))
}

/// Number of phase branches the fast path creates (`2^pools`).
pub fn branch_count(net: &Network<f32>) -> Option<usize> {
    shared_trunk(net).map(|(_, p)| 1 << p)
}

struct FastCtx<'a> {
    net: &'a Network<f32>,
    split: usize,
    pools: usize,
    /// Window-local temporal length at `split`.
    tail_len: usize,
    n: usize,
}

/// Evaluates trunk layers on one branch from `layer` on; returns
/// `(branch id, head output)` for every leaf below it.
fn descend(ctx: &FastCtx, x: Tensor<f32>, layer: usize, branch: usize, level: usize) -> Result<Vec<(usize, Tensor<f32>)>> {
    if branch >= ctx.n {
        // Every window of this branch would start past the recording.
        return Ok(Vec::new());
    }
    let mut x = x;
    let mut layer = layer;
    while layer < ctx.split {
        let l = &ctx.net.layers()[layer];
        if l.spec == LayerSpec::MaxPool {
            let (_, m, ch) = (x.batch(), x.len(), x.channels());
            let phase = |p: usize| -> Tensor<f32> {
                let lo = m.saturating_sub(p) / 2;
                let src = x.data();
                let mut out = Vec::with_capacity(lo * ch);
                for j in 0..lo {
                    let a = &src[(p + 2 * j) * ch..][..ch];
                    let b = &src[(p + 2 * j + 1) * ch..][..ch];
                    // Ties go to the first element, as in the pooling layer.
                    out.extend(a.iter().zip(b).map(|(&u, &v)| if v > u { v } else { u }));
                }
                Tensor::from_vec(1, lo, ch, out)
            };
            let (even, odd) = rayon::join(
                || descend(ctx, phase(0), layer + 1, branch, level + 1),
                || descend(ctx, phase(1), layer + 1, branch + (1 << level), level + 1),
            );
            let mut out = even?;
            out.extend(odd?);
            return Ok(out);
        }
        x = l.infer(&x, 1)?;
        layer += 1;
    }

    // Leaf: gather each window's trunk rows and run the head.
    let stride = 1usize << ctx.pools;
    let count = (ctx.n - branch).div_ceil(stride);
    let (m, ch, tl) = (x.len(), x.channels(), ctx.tail_len);
    if count + tl - 1 > m {
        return Err(Error::Shape(format!("branch {branch} has {m} rows, needs {}", count + tl - 1)));
    }
    let mut data = Vec::with_capacity(count * tl * ch);
    for k in 0..count {
        data.extend_from_slice(&x.data()[k * ch..(k + tl) * ch]);
    }
    let head = Tensor::from_vec(count, tl, ch, data);
    let y = ctx.net.infer_layers(head, ctx.split..ctx.net.layers().len(), count)?;
    Ok(vec![(branch, y)])
}

/// Same output as [`predict_dense_naive`], computed by sharing the trunk
/// across windows. Networks with `same`-padded convolutions before the last
/// pool fall back to the naive path.
pub fn predict_dense_fast(net: &Network<f32>, channels: &[&[f32]]) -> Result<PredictionTrack> {
    let n = check_channels(net, channels)?;
    let Some((split, pools)) = shared_trunk(net) else {
        return predict_dense_naive(net, channels);
    };
    let spec = net.spec();
    let (w, c, k) = (spec.window_samples, spec.in_channels, spec.n_classes);
    let tail_len = spec.shapes()?[split - 1].0;

    // Window for center `i` is padded[i .. i + w].
    let half = (w / 2) as isize;
    let mut padded = Vec::with_capacity((n + w - 1) * c);
    for j in 0..(n + w - 1) as isize {
        let idx = (j - half).clamp(0, n as isize - 1) as usize;
        padded.extend(channels.iter().map(|ch| ch[idx]));
    }
    let ctx = FastCtx { net, split, pools, tail_len, n };
    let leaves = descend(&ctx, Tensor::from_vec(1, n + w - 1, c, padded), 0, 0, 0)?;

    let stride = 1usize << pools;
    let mut probs = vec![0.0f32; n * k];
    for (branch, y) in leaves {
        if y.channels() != k || y.len() != 1 {
            return Err(Error::Shape("network does not emit one row per window".into()));
        }
        for (j, row) in y.data().chunks_exact(k).enumerate() {
            let s = branch + j * stride;
            probs[s * k..(s + 1) * k].copy_from_slice(row);
        }
    }
    Ok(PredictionTrack::from_probs(probs, k, 1))
}

/// Per-window probabilities of the CNN-LSTM over the whole recording,
/// `windows × 2`.
pub fn predict_cnn_lstm_windows(net: &Network<f32>, channels: &[&[f32]]) -> Result<Tensor<f32>> {
    let n = check_channels(net, channels)?;
    let spec = net.spec();
    let seq_at = spec
        .layers
        .iter()
        .position(|l| *l == LayerSpec::Sequence)
        .ok_or_else(|| Error::InvalidArgument("network has no sequence stage".into()))?;
    if spec.window_samples != LSTM_WINDOW_SAMPLES {
        return Err(Error::Shape(format!("expected {LSTM_WINDOW_SAMPLES}-sample windows")));
    }
    let windows = lstm_window_count(n)?;
    let c = spec.in_channels;
    let starts: Vec<usize> = (0..windows).map(|i| i * LSTM_STRIDE_SAMPLES).collect();
    let parts: Vec<Tensor<f32>> = starts
        .par_chunks(ENCODER_BATCH)
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * LSTM_WINDOW_SAMPLES * c);
            for &s in chunk {
                for i in s..s + LSTM_WINDOW_SAMPLES {
                    data.extend(channels.iter().map(|ch| ch[i]));
                }
            }
            let x = Tensor::from_vec(chunk.len(), LSTM_WINDOW_SAMPLES, c, data);
            net.infer_layers(x, 0..seq_at, 1)
        })
        .collect::<Result<_>>()?;
    let feat = parts[0].channels();
    let mut all = Vec::with_capacity(windows * feat);
    for p in parts {
        all.extend_from_slice(p.data());
    }
    let y = net.infer_layers(Tensor::from_vec(windows, 1, feat, all), seq_at..spec.layers.len(), 1)?;
    Ok(y.reshape(windows, 1, spec.n_classes))
}

/// Per-sample track from the CNN-LSTM: window `k` (center `50k + 100`)
/// labels the 50 samples centered on it; samples before the first or after
/// the last such span take the nearest window.
pub fn predict_cnn_lstm(net: &Network<f32>, channels: &[&[f32]]) -> Result<PredictionTrack> {
    let n = check_channels(net, channels)?;
    let y = predict_cnn_lstm_windows(net, channels)?;
    let (windows, k) = (y.batch(), y.channels());
    let first = LSTM_WINDOW_SAMPLES / 2 - LSTM_STRIDE_SAMPLES / 2;
    let mut probs = Vec::with_capacity(n * k);
    for i in 0..n {
        let w = (i.saturating_sub(first) / LSTM_STRIDE_SAMPLES).min(windows - 1);
        probs.extend_from_slice(&y.data()[w * k..(w + 1) * k]);
    }
    Ok(PredictionTrack::from_probs(probs, k, LSTM_STRIDE_SAMPLES))
}

/// Tie-break order for majority votes: MSE, MSEc, ED, then W.
fn priority(n_classes: usize, code: usize) -> usize {
    match (n_classes, code) {
        (4, 1) => 0,
        (4, 2) => 1,
        (4, 3) => 2,
        (4, _) => 3,
        (2, 1) => 0,
        (2, _) => 1,
        (_, c) => c,
    }
}

/// Gives every `interval`-sample block (the last may be shorter) its most
/// frequent label; probabilities become block means. Blocks are expanded
/// back to one row per sample.
pub fn coarsen_majority(track: &PredictionTrack, interval: usize) -> Result<PredictionTrack> {
    if interval == 0 {
        return Err(Error::InvalidArgument("coarsening interval must be positive".into()));
    }
    let k = track.n_classes;
    let mut probs = Vec::with_capacity(track.probs.len());
    let mut labels = Vec::with_capacity(track.len());
    for start in (0..track.len()).step_by(interval) {
        let end = (start + interval).min(track.len());
        let mut counts = vec![0usize; k];
        let mut mean = vec![0.0f64; k];
        for i in start..end {
            counts[track.labels[i]] += 1;
            for (m, &p) in mean.iter_mut().zip(track.row(i)) {
                *m += f64::from(p);
            }
        }
        let best = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(priority(k, b).cmp(&priority(k, a))))
            .unwrap_or(0);
        let span = (end - start) as f64;
        let row: Vec<f32> = mean.iter().map(|m| (m / span) as f32).collect();
        for _ in start..end {
            probs.extend_from_slice(&row);
            labels.push(best);
        }
    }
    Ok(PredictionTrack { n_classes: k, probs, labels, resolution_samples: interval })
}

/// A maximal run of one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub start_sample: usize,
    pub end_sample_exclusive: usize,
    pub class: Label,
    /// MSE run longer than the duration ceiling (kept, but marked as sleep).
    pub long_sleep: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.end_sample_exclusive - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn episodes_from_labels(labels: &[Label]) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(e) if e.class == l => e.end_sample_exclusive = i + 1,
            _ => out.push(Episode { start_sample: i, end_sample_exclusive: i + 1, class: l, long_sleep: false }),
        }
    }
    out
}

pub fn labels_from_episodes(episodes: &[Episode]) -> Vec<Label> {
    episodes.iter().flat_map(|e| std::iter::repeat_n(e.class, e.len())).collect()
}

/// Relabels MSE runs shorter than `min_s` seconds as W. Longer-than-`max_s`
/// runs are untouched here; see [`flag_long_episodes`].
pub fn apply_duration_criteria(labels: &[Label], rate_hz: f64, min_s: f64) -> Vec<Label> {
    let min_len = (min_s * rate_hz).round() as usize;
    let mut out = labels.to_vec();
    for e in episodes_from_labels(labels) {
        if e.class == Label::Mse && e.len() < min_len {
            out[e.start_sample..e.end_sample_exclusive].fill(Label::W);
        }
    }
    out
}

/// Marks MSE episodes longer than `max_s` seconds.
pub fn flag_long_episodes(episodes: &mut [Episode], rate_hz: f64, max_s: f64) {
    let max_len = (max_s * rate_hz).round() as usize;
    for e in episodes {
        e.long_sleep = e.class == Label::Mse && e.len() > max_len;
    }
}

/// `index,label,p...` rows. With `per_interval`, one row per
/// `resolution_samples` block, indexed by the block's first sample.
pub fn format_prediction(track: &PredictionTrack, per_interval: bool) -> String {
    let names = class_names(track.n_classes);
    let step = if per_interval { track.resolution_samples.max(1) } else { 1 };
    let mut header = String::from("index,label");
    for name in &names {
        header.push_str(&format!(",p{name}"));
    }
    let mut out = header + "\n";
    for i in (0..track.len()).step_by(step) {
        out.push_str(&format!("{i},{}", names[track.labels[i]]));
        for p in track.row(i) {
            out.push_str(&format!(",{p:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Reads a per-sample file written by [`format_prediction`].
pub fn parse_prediction(text: &str) -> Result<PredictionTrack> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty prediction file".into()))?;
    let k = header.split(',').count().saturating_sub(2);
    let names = class_names(k);
    if k < 2 || header.split(',').skip(2).zip(&names).any(|(h, n)| h != format!("p{n}")) {
        return Err(Error::InvalidArgument(format!("unrecognized prediction header {header:?}")));
    }
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (row, line) in lines.enumerate() {
        let bad = |msg: &str| Error::LabelFormat { line: row + 2, msg: msg.to_string() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != k + 2 {
            return Err(bad("wrong number of fields"));
        }
        if f[0].parse::<usize>().ok() != Some(row) {
            return Err(bad("indices must be consecutive from 0"));
        }
        labels.push(names.iter().position(|n| n == f[1]).ok_or_else(|| bad("unknown label"))?);
        for p in &f[2..] {
            probs.push(p.parse::<f32>().map_err(|_| bad("bad probability"))?);
        }
    }
    Ok(PredictionTrack { n_classes: k, probs, labels, resolution_samples: 1 })
}

/// `start_sample,end_sample_exclusive,class,flag` rows; flag is `long` or `-`.
pub fn format_episodes(episodes: &[Episode]) -> String {
    let mut out = String::from("start_sample,end_sample_exclusive,class,flag\n");
    for e in episodes {
        let flag = if e.long_sleep { "long" } else { "-" };
        out.push_str(&format!("{},{},{},{flag}\n", e.start_sample, e.end_sample_exclusive, e.class));
    }
    out
}
