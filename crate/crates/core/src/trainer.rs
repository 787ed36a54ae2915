//! Training loops: batch sampling, weighted loss, Nadam updates, per-iteration
//! validation snapshots and a text history.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::architectures::ArchId;
use crate::dataset::{
    binary_target, class_weights, class_weights_from_codes, BatchSampler, ChannelMode, ClassWeights, PreparedRecording,
    SequenceSampler, WindowBatch, Weighting,
};
use crate::error::{Error, Result};
use crate::evaluation::{binarize_mse, concatenated_report, KappaReport};
use crate::nn::{clip_grad_norm, weighted_cross_entropy, Family, Mode, NadamConfig, Network, NetworkSpec, OptimizerState};
use crate::segmentation::{predict_cnn_lstm, predict_dense_fast};
use crate::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub weighting: Weighting,
    /// Windows per CNN batch; for the CNN-LSTM, windows per batch split into
    /// sequences of `sequence_len`.
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: NadamConfig,
    /// Global gradient-norm ceiling (CNN-LSTM only).
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Consecutive windows per CNN-LSTM training sequence.
    pub sequence_len: usize,
    /// Optional cap on batches per iteration (quick runs).
    pub max_batches: Option<usize>,
}

impl TrainConfig {
    pub fn for_arch(arch: ArchId, seed: u64) -> Self {
        let lstm = arch.family() == Family::CnnLstm;
        Self {
            arch,
            weighting: arch.weighting(),
            batch_size: if lstm { 128 } else { 200 },
            iterations: if lstm { 8 } else { 3 },
            optimizer: NadamConfig::default(),
            clip_norm: lstm.then_some(1.0),
            seed,
            sequence_len: 32,
            max_batches: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.iterations == 0 || self.sequence_len == 0 {
            return bad("batch size, iterations and sequence length must be positive");
        }
        if self.max_batches == Some(0) {
            return bad("max_batches must be positive");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        match (self.arch.family(), self.clip_norm) {
            (Family::Cnn, Some(_)) => bad("gradient clipping applies to the CNN-LSTM only"),
            (_, Some(c)) if !(c > 0.0) => bad("clip norm must be positive"),
            _ => Ok(()),
        }
    }
}

/// Per-class validation kappa after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub report: KappaReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// `(global step, batch loss)`.
    pub steps: Vec<(usize, f64)>,
    pub snapshots: Vec<Snapshot>,
    /// Ids of every recording a training batch was drawn from.
    pub trained_on: BTreeSet<String>,
}

impl History {
    /// `# step,loss` then `# iteration,class,kappa` sections.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# step,loss\n");
        for (s, l) in &self.steps {
            out.push_str(&format!("{s},{l:.9}\n"));
        }
        out.push_str("# iteration,class,kappa\n");
        for snap in &self.snapshots {
            for (name, k) in snap.report.class_names.iter().zip(&snap.report.kappa) {
                out.push_str(&format!("{},{name},{k:.6}\n", snap.iteration));
            }
        }
        out
    }
}

/// One forward/backward/update on `batch`; returns the batch loss.
pub fn train_step(
    net: &mut Network<f32>,
    opt: &mut OptimizerState<f32>,
    batch: &WindowBatch,
    clip_norm: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    net.zero_grads();
    let probs = net.forward(&batch.inputs, Mode::Train, batch.sequences, rng)?;
    let (loss, grad) = weighted_cross_entropy(&probs, &batch.targets, &batch.weights)?;
    if !loss.is_finite() {
        net.clear_caches();
        return Err(Error::NonFinite(0));
    }
    net.backward(&grad)?;
    if let Some(max) = clip_norm {
        clip_grad_norm(net.trainable_mut(), max);
    }
    opt.step(net.trainable_mut())?;
    Ok(loss)
}

/// Predicted and reference class codes for one validation recording.
fn validation_pair(net: &Network<f32>, rec: &PreparedRecording) -> Result<(Vec<usize>, Vec<usize>)> {
    match net.spec().family {
        Family::Cnn => {
            let mode = ChannelMode::for_channels(net.spec().in_channels)?;
            let chans = rec.inputs(mode, 0);
            let track = predict_dense_fast(net, &chans)?;
            Ok((track.labels, rec.labels.iter().map(|l| l.code()).collect()))
        }
        Family::CnnLstm => {
            let chans = rec.inputs(ChannelMode::Stacked, 0);
            let track = predict_cnn_lstm(net, &chans)?;
            Ok((track.labels, binarize_mse(&rec.labels)))
        }
    }
}

/// Runs the segmentation pipeline on every validation recording and scores
/// the concatenation.
pub fn evaluate_during_training(net: &Network<f32>, validation: &[PreparedRecording]) -> Result<KappaReport> {
    let pairs = validation.iter().map(|r| validation_pair(net, r)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&[usize], &[usize])> = pairs.iter().map(|(p, r)| (p.as_slice(), r.as_slice())).collect();
    concatenated_report(&refs, net.spec().n_classes)
}

/// Trains a fresh network of `spec` on `train`.
///
/// After every iteration the network is scored on `validation` (skipped when
/// empty) and handed to `on_iteration` (e.g. to write a checkpoint).
pub fn train<C>(
    spec: NetworkSpec,
    train: &[PreparedRecording],
    validation: &[PreparedRecording],
    cfg: &TrainConfig,
    mut on_iteration: C,
) -> Result<(Network<f32>, History)>
where
    C: FnMut(usize, &Network<f32>, &History) -> Result<()>,
{
    cfg.validate()?;
    if train.is_empty() || train.iter().all(|r| r.is_empty()) {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let family = spec.family;
    let mode = ChannelMode::for_channels(spec.in_channels)?;
    let window = spec.window_samples;
    let all_labels: Vec<Label> = train.iter().flat_map(|r| r.labels.iter().copied()).collect();
    let weights: ClassWeights = match family {
        Family::Cnn => class_weights(&all_labels, cfg.weighting)?,
        Family::CnnLstm => {
            let codes: Vec<usize> = all_labels.iter().map(|&l| binary_target(l)).collect();
            class_weights_from_codes(&codes, 2, cfg.weighting)?
        }
    };

    let mut net = Network::<f32>::new(spec, cfg.seed)?;
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut history = History::default();
    let mut step = 0;

    match family {
        Family::Cnn => {
            let mut sampler = BatchSampler::new(train)?;
            let per_iter = sampler.pool_size().div_ceil(cfg.batch_size);
            let batches = cfg.max_batches.map_or(per_iter, |m| m.min(per_iter));
            for it in 1..=cfg.iterations {
                sampler.start_iteration(&mut rng);
                for _ in 0..batches {
                    let batch = sampler.sample_batch(train, cfg.batch_size, window, mode, true, &weights, &mut rng)?;
                    for &(r, _, _) in &batch.sources {
                        history.trained_on.insert(train[r].id.clone());
                    }
                    let loss = train_step(&mut net, &mut opt, &batch, cfg.clip_norm, &mut rng)?;
                    step += 1;
                    history.steps.push((step, loss));
                }
                finish_iteration(it, &net, validation, &mut history, &mut on_iteration)?;
            }
        }
        Family::CnnLstm => {
            let mut sampler = SequenceSampler::new(train, cfg.sequence_len)?;
            let seqs = (cfg.batch_size / cfg.sequence_len).max(1);
            let per_iter = sampler.total_windows().div_ceil(seqs * cfg.sequence_len);
            let batches = cfg.max_batches.map_or(per_iter, |m| m.min(per_iter));
            for it in 1..=cfg.iterations {
                sampler.start_iteration(&mut rng);
                for _ in 0..batches {
                    if sampler.remaining() == 0 {
                        break;
                    }
                    let batch = sampler.sample_batch(train, seqs, &weights, &mut rng)?;
                    for &(r, _, _) in &batch.sources {
                        history.trained_on.insert(train[r].id.clone());
                    }
                    let loss = train_step(&mut net, &mut opt, &batch, cfg.clip_norm, &mut rng)?;
                    step += 1;
                    history.steps.push((step, loss));
                }
                finish_iteration(it, &net, validation, &mut history, &mut on_iteration)?;
            }
        }
    }
    Ok((net, history))
}

fn finish_iteration<C>(
    iteration: usize,
    net: &Network<f32>,
    validation: &[PreparedRecording],
    history: &mut History,
    on_iteration: &mut C,
) -> Result<()>
where
    C: FnMut(usize, &Network<f32>, &History) -> Result<()>,
{
    if !validation.is_empty() {
        let report = evaluate_during_training(net, validation)?;
        history.snapshots.push(Snapshot { iteration, report });
    }
    on_iteration(iteration, net, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{save_params, LayerSpec, Tensor};

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            family: Family::Cnn,
            window_samples: 12,
            in_channels: 3,
            n_classes: 4,
            layers: vec![
                LayerSpec::conv(4),
                LayerSpec::batch_norm(),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::conv(8),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 16 },
                LayerSpec::Relu,
                LayerSpec::Softmax { classes: 4 },
            ],
        }
    }

    #[test]
    fn overfits_one_batch() {
        let mut net = Network::<f32>::new(tiny_spec(), 4).unwrap();
        let mut opt = OptimizerState::new(NadamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..8 * 12 * 3).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        let batch = WindowBatch {
            inputs: Tensor::from_vec(8, 12, 3, data),
            targets: vec![0, 1, 2, 3, 0, 1, 2, 3],
            weights: vec![1.0; 8],
            sources: Vec::new(),
            sequences: 8,
        };
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let loss = train_step(&mut net, &mut opt, &batch, None, &mut rng).unwrap();
            assert!(loss < last, "{loss} !< {last}");
            last = loss;
        }
    }

    fn recording(id: &str, n: usize, seed: usize) -> PreparedRecording {
        let labels: Vec<Label> = (0..n).map(|i| Label::ALL[((i + seed) / 25) % 4]).collect();
        let sig = |k: usize| -> Vec<f32> {
            labels.iter().enumerate().map(|(i, l)| ((i * (k + 1) + l.code() * 13) % 17) as f32 / 17.0 - 0.5).collect()
        };
        PreparedRecording { id: id.into(), eeg: [sig(0), sig(1)], eog: [sig(2), sig(3)], labels }
    }

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::for_arch(ArchId::Cnn2, 11);
        cfg.batch_size = 32;
        cfg.iterations = 2;
        cfg
    }

    #[test]
    fn deterministic_with_snapshots_and_audit() {
        let train_set = vec![recording("t1", 150, 0), recording("t2", 120, 7)];
        let val = vec![recording("v1", 100, 3)];
        let run = || {
            let mut ckpts = Vec::new();
            let (net, hist) = train(tiny_spec(), &train_set, &val, &small_cfg(), |_, n, _| {
                ckpts.push(save_params(n));
                Ok(())
            })
            .unwrap();
            (save_params(&net), hist, ckpts)
        };
        let (a, ha, ca) = run();
        let (b, hb, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(ca.len(), 2);
        assert_eq!(ha.to_text(), hb.to_text());
        assert_eq!(ha.steps.len(), 2 * 270usize.div_ceil(32));
        assert_eq!(ha.snapshots.len(), 2);
        for s in &ha.snapshots {
            assert!(s.report.kappa.iter().all(|k| (-1.0..=1.0).contains(k)));
        }
        assert!(ha.trained_on.iter().all(|id| id.starts_with('t')));
    }

    #[test]
    fn snapshot_is_pure() {
        let val = vec![recording("v", 90, 1)];
        let net = Network::<f32>::new(tiny_spec(), 2).unwrap();
        assert_eq!(evaluate_during_training(&net, &val).unwrap(), evaluate_during_training(&net, &val).unwrap());
    }

    #[test]
    fn config_guards() {
        let mut cfg = TrainConfig::for_arch(ArchId::Cnn16, 0);
        cfg.clip_norm = Some(1.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let lstm = TrainConfig::for_arch(ArchId::CnnLstm, 0);
        assert_eq!((lstm.batch_size, lstm.iterations, lstm.clip_norm), (128, 8, Some(1.0)));
        lstm.validate().unwrap();
        assert!(train(tiny_spec(), &[], &[], &small_cfg(), |_, _, _| Ok(())).is_err());
        // Inverse weighting needs every class in the training labels.
        let mut only_w = recording("w", 60, 0);
        only_w.labels = vec![Label::W; 60];
        assert!(matches!(
            train(tiny_spec(), &[only_w], &[], &small_cfg(), |_, _, _| Ok(())),
            Err(Error::AbsentClass(_))
        ));
    }

    #[test]
    fn uniform_weighting_is_plain_cross_entropy() {
        let probs = Tensor::from_vec(3, 1, 4, vec![0.7f32, 0.1, 0.1, 0.1, 0.2, 0.5, 0.2, 0.1, 0.25, 0.25, 0.25, 0.25]);
        let w = class_weights(&Label::ALL, Weighting::Uniform).unwrap();
        let targets = [0, 1, 3];
        let weights: Vec<f64> = targets.iter().map(|&t| w.weight(t)).collect();
        let (loss, _) = weighted_cross_entropy(&probs, &targets, &weights).unwrap();
        let plain = -(0.7f64.ln() + 0.5f64.ln() + 0.25f64.ln()) / 3.0;
        assert!((loss - plain).abs() < 1e-7);
    }

    #[test]
    fn lstm_training_runs() {
        use crate::architectures::build_cnn_lstm;
        let n = 200 + 50 * 40;
        let mut rec = recording("t", n, 0);
        rec.labels = (0..n).map(|i| if (i / 400) % 2 == 1 { Label::Mse } else { Label::W }).collect();
        let mut cfg = TrainConfig::for_arch(ArchId::CnnLstm, 3);
        cfg.sequence_len = 8;
        cfg.batch_size = 16;
        cfg.iterations = 1;
        cfg.max_batches = Some(2);
        let (_, hist) = train(build_cnn_lstm().unwrap(), &[rec.clone()], &[rec], &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(hist.steps.len(), 2);
        assert_eq!(hist.snapshots[0].report.class_names, vec!["nonMSE", "MSE"]);
    }
}
