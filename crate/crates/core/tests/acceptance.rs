//! Acceptance suite. `acceptance_suite` runs criteria 1-6 and 8-10 in order
//! and prints one PASS/FAIL line each; run with `--nocapture` to see them.
//! Criterion 7 needs the full MWT corpus and is `#[ignore]`d.

use std::time::Instant;

use microsleep::architectures::{build_cnn, build_cnn_embedding, build_cnn_lstm, repeat_count, ArchId, WINDOWS_S};
use microsleep::conditioning::{condition_recording, fourier_bandpass, normalize_cnn, BandSpec};
use microsleep::dataset::{split_by_patient, PreparedRecording};
use microsleep::embedding::{extract_features, tsne, TsneConfig};
use microsleep::evaluation::{concatenated_report, format_report_table, per_class_kappa, per_class_kappa_codes, KappaReport};
use microsleep::ingest::{parse_edf, parse_labels};
use microsleep::nn::gradcheck::{check_input, check_network, CheckReport, Probe};
use microsleep::nn::{save_params, Family, LayerSpec, Network, NetworkSpec, Padding, Tensor};
use microsleep::segmentation::{format_prediction, predict_cnn_lstm, predict_dense_fast, predict_dense_naive};
use microsleep::synthgen::{generate, generate_corpus, SynthConfig};
use microsleep::trainer::{train, TrainConfig};
use microsleep::{Label, Recording, E1M1, E2M1, O1M2, O2M1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const GRAD_STEP: f64 = 1e-5;
const GRAD_MAX_REL: f64 = 1e-4;
const DENSE_MAX_ABS: f32 = 1e-5;
const SPEEDUP_MIN: f64 = 20.0;
const FILTER_REL: f64 = 1e-9;
const FILTER_ENERGY: f64 = 1e-10;
const KAPPA_ABS: f64 = 1e-12;
const LEARN_KAPPA_MIN: f64 = 0.8;
const REFERENCE_TOL: f64 = 0.15;

struct Line {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run(lines: &mut Vec<Line>, id: &'static str, name: &'static str, f: impl FnOnce() -> (bool, String)) {
    let t = Instant::now();
    let (pass, detail) = f();
    let line = Line { id, name, pass, detail: format!("{detail} [{:.1} s]", t.elapsed().as_secs_f64()) };
    println!("{} {} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.id, line.name, line.detail);
    lines.push(line);
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- 1

fn probe(batch: usize, len: usize, ch: usize, classes: usize, seed: u64) -> Probe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = uniform(&mut rng, batch * len * ch, -1.0, 1.0);
    let targets: Vec<usize> = (0..batch).map(|i| (i * 7 + 1) % classes).collect();
    let weights = targets.iter().map(|&k| 0.5 + 0.25 * k as f64).collect();
    Probe { input: Tensor::from_vec(batch, len, ch, data), sequences: batch, targets, weights, seed }
}

fn gradcheck(spec: NetworkSpec, probe: &Probe, per_tensor: usize) -> microsleep::Result<(CheckReport, CheckReport)> {
    let mut net = Network::<f64>::new(spec, 11)?;
    let p = check_network(&mut net, probe, GRAD_STEP, per_tensor, 5)?;
    let i = check_input(&mut net, probe, GRAD_STEP, per_tensor, 6)?;
    Ok((p, i))
}

fn criterion_1() -> (bool, String) {
    let cnn = |layers: Vec<LayerSpec>| NetworkSpec { family: Family::Cnn, window_samples: 10, in_channels: 2, n_classes: 3, layers };
    let head = |mut l: Vec<LayerSpec>| {
        l.extend([LayerSpec::Flatten, LayerSpec::Softmax { classes: 3 }]);
        l
    };
    let same = LayerSpec::Conv1d { filters: 3, padding: Padding::Same };
    let kinds: Vec<(&str, NetworkSpec)> = vec![
        ("conv valid", cnn(head(vec![LayerSpec::conv(3)]))),
        ("conv same", cnn(head(vec![same.clone()]))),
        ("batchnorm", cnn(head(vec![LayerSpec::conv(3), LayerSpec::batch_norm()]))),
        ("relu", cnn(head(vec![LayerSpec::conv(3), LayerSpec::Relu]))),
        ("maxpool", cnn(head(vec![LayerSpec::conv(3), LayerSpec::MaxPool]))),
        ("noise", cnn(head(vec![LayerSpec::GaussianNoise { std: 0.1 }, same]))),
        ("dense", cnn(vec![LayerSpec::Flatten, LayerSpec::Dense { units: 5 }, LayerSpec::Softmax { classes: 3 }])),
        ("dropout", cnn(vec![LayerSpec::Flatten, LayerSpec::Dropout { rate: 0.4 }, LayerSpec::Softmax { classes: 3 }])),
        ("softmax", cnn(vec![LayerSpec::Flatten, LayerSpec::Softmax { classes: 3 }])),
        (
            "lstm",
            NetworkSpec {
                family: Family::CnnLstm,
                window_samples: 4,
                in_channels: 2,
                n_classes: 2,
                layers: vec![LayerSpec::Flatten, LayerSpec::Sequence, LayerSpec::Lstm { hidden: 5 }, LayerSpec::Softmax { classes: 2 }],
            },
        ),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut notes = Vec::new();
    for (name, spec) in kinds {
        let (len, ch, classes) = (spec.window_samples, spec.in_channels, spec.n_classes);
        let mut pr = probe(6, len, ch, classes, 21);
        if spec.family == Family::CnnLstm {
            pr.sequences = 2;
        }
        match gradcheck(spec, &pr, 1000) {
            Ok((p, i)) => {
                let e = p.max_rel_error.max(i.max_rel_error);
                worst = worst.max(e);
                checked += p.checked + i.checked;
                skipped += p.skipped_kinks + i.skipped_kinks;
                if e >= GRAD_MAX_REL {
                    notes.push(format!("{name} {e:.2e}"));
                }
            }
            Err(e) => notes.push(format!("{name}: {e}")),
        }
    }

    let full = [
        ("2s cnn", build_cnn(2, 3), probe(4, 400, 3, 4, 31), 6),
        ("cnn_lstm 10 steps", build_cnn_lstm(), {
            let mut p = probe(10, 200, 3, 2, 41);
            p.sequences = 1;
            p
        }, 6),
    ];
    for (name, spec, pr, per) in full {
        match spec.and_then(|s| gradcheck(s, &pr, per)) {
            Ok((p, i)) => {
                let e = p.max_rel_error.max(i.max_rel_error);
                worst = worst.max(e);
                checked += p.checked + i.checked;
                skipped += p.skipped_kinks + i.skipped_kinks;
                notes.push(format!("{name} {e:.2e} over {} entries", p.checked + i.checked));
                if e >= GRAD_MAX_REL {
                    notes.push(format!("{name} over tolerance"));
                }
            }
            Err(e) => notes.push(format!("{name}: {e}")),
        }
    }
    // Kink skips must stay rare or the check would be vacuous.
    let skip_ok = skipped * 20 <= checked;
    let pass = worst < GRAD_MAX_REL && skip_ok && !notes.iter().any(|n| n.contains(':') || n.contains("over tolerance"));
    (
        pass,
        format!(
            "max rel error {worst:.2e} (< {GRAD_MAX_REL:e}) across {checked} entries, {skipped} skipped at ReLU/max-pool kinks (<= 5%); {}",
            notes.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

/// Random weights and batch-norm statistics.
fn randomized(spec: NetworkSpec, seed: u64) -> Network<f32> {
    let mut net = Network::<f32>::new(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for p in net.params_mut() {
        for v in p.value.iter_mut() {
            *v = match p.name {
                "moving_variance" => rng.random_range(0.5..1.5),
                "moving_mean" | "beta" | "bias" => rng.random_range(-0.1..0.1),
                "gamma" => rng.random_range(0.8..1.2),
                _ => *v * rng.random_range(0.8f32..1.2),
            };
        }
    }
    net
}

fn synth_inputs(duration_s: f64, seed: u64) -> Vec<Vec<f32>> {
    // Short recordings cannot hold the default MSEc/ED budgets.
    let cfg = SynthConfig { duration_s, mse_fraction: 0.2, msec_fraction: 0.0, ed_fraction: 0.0, ..SynthConfig::default() };
    let (rec, _) = generate(&cfg, seed).unwrap();
    let rec = condition_recording(&rec).unwrap();
    [O1M2, E1M1, E2M1].iter().map(|n| normalize_cnn(rec.channel(n).unwrap())).collect()
}

fn top_two_gap(row: &[f32]) -> f32 {
    let mut s: Vec<f32> = row.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

fn criterion_2() -> (bool, String) {
    let mut worst = 0.0f32;
    let mut label_diffs = 0;
    let mut tie_diffs = 0;
    for k in 0..20u64 {
        let window = if k % 2 == 0 { 2 } else { 4 };
        let net = randomized(build_cnn(window, 3).unwrap(), 100 + k);
        let chans = synth_inputs(10.0, 200 + k);
        let views: Vec<&[f32]> = chans.iter().map(Vec::as_slice).collect();
        let fast = predict_dense_fast(&net, &views).unwrap();
        let naive = predict_dense_naive(&net, &views).unwrap();
        for (a, b) in fast.probs.iter().zip(&naive.probs) {
            worst = worst.max((a - b).abs());
        }
        for i in 0..naive.len() {
            if fast.labels[i] != naive.labels[i] {
                if top_two_gap(naive.row(i)) <= 2.0 * DENSE_MAX_ABS {
                    tie_diffs += 1;
                } else {
                    label_diffs += 1;
                }
            }
        }
    }
    (
        worst <= DENSE_MAX_ABS && label_diffs == 0,
        format!("20 nets (2 s, 4 s) x 2000 samples: max |fast - naive| {worst:.2e} (<= {DENSE_MAX_ABS:e}), {label_diffs} label differences ({tie_diffs} at near-ties)"),
    )
}

fn criterion_3() -> (bool, String) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let net = randomized(build_cnn(16, 3).unwrap(), 7);
        let chans = synth_inputs(60.0, 8);
        let views: Vec<&[f32]> = chans.iter().map(Vec::as_slice).collect();
        let t = Instant::now();
        let fast = predict_dense_fast(&net, &views).unwrap();
        let t_fast = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let naive = predict_dense_naive(&net, &views).unwrap();
        let t_naive = t.elapsed().as_secs_f64();
        let diff = fast.probs.iter().zip(&naive.probs).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        let speedup = t_naive / t_fast;
        (
            speedup >= SPEEDUP_MIN && diff <= DENSE_MAX_ABS,
            format!("16 s net, 60 s recording, 1 thread: naive {t_naive:.2} s, fast {t_fast:.3} s, speedup {speedup:.1}x (>= {SPEEDUP_MIN}x), max diff {diff:.1e}"),
        )
    })
}

// ---------------------------------------------------------------- 4

/// Naive O(N^2) DFT, `(re, im)` per bin.
fn dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |acc, (t, &v)| {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                (acc.0 + v * a.cos(), acc.1 + v * a.sin())
            })
        })
        .collect()
}

fn bin_hz(k: usize, n: usize, rate: f64) -> f64 {
    let k = k.min(n - k);
    k as f64 * rate / n as f64
}

fn criterion_4() -> (bool, String) {
    let n = 2000;
    let rate = 200.0;
    let band = BandSpec::standard(rate);
    let tone = |f: f64, amp: f64, phase: f64| -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / rate + phase).sin()).collect()
    };
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut stop_worst = 0.0f64;
    for f in [0.1, 0.2, 0.4, 45.1, 50.0, 60.0, 80.0, 99.9] {
        let out = fourier_bandpass(&tone(f, 40.0, 0.3), &band).unwrap();
        stop_worst = stop_worst.max(max_abs(&out) / 40.0);
    }
    let mut pass_worst = 0.0f64;
    for f in [0.5, 1.0, 5.0, 10.0, 30.0, 44.9, 45.0] {
        let x = tone(f, 40.0, 0.7);
        let out = fourier_bandpass(&x, &band).unwrap();
        let dev: Vec<f64> = out.iter().zip(&x).map(|(a, b)| a - b).collect();
        pass_worst = pass_worst.max(max_abs(&dev) / 40.0);
    }

    // Broadband input: energy left in zeroed bins, by an independent DFT.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy: Vec<f64> = uniform(&mut rng, n, -50.0, 50.0).iter().zip(tone(0.2, 80.0, 0.0)).map(|(a, b)| a + b + 25.0).collect();
    let out = fourier_bandpass(&noisy, &band).unwrap();
    let spec = dft(&out);
    let (mut stop_e, mut total_e) = (0.0, 0.0);
    for (k, (re, im)) in spec.iter().enumerate() {
        let e = re * re + im * im;
        total_e += e;
        let f = bin_hz(k, n, rate);
        if f < band.low_hz || f > band.high_hz {
            stop_e += e;
        }
    }
    let ratio = stop_e / total_e;
    (
        stop_worst <= FILTER_REL && pass_worst <= FILTER_REL && ratio <= FILTER_ENERGY,
        format!(
            "stopband residual {stop_worst:.1e}, passband deviation {pass_worst:.1e} (<= {FILTER_REL:e}); out-of-band energy ratio {ratio:.1e} (<= {FILTER_ENERGY:e})"
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Brute-force one-vs-rest kappa from a 2x2 contingency table.
fn oracle_kappa(pred: &[usize], reference: &[usize], k: usize) -> f64 {
    let n = pred.len() as f64;
    let mut t = [[0.0f64; 2]; 2];
    for (&p, &r) in pred.iter().zip(reference) {
        t[usize::from(r == k)][usize::from(p == k)] += 1.0;
    }
    let po = (t[0][0] + t[1][1]) / n;
    let pe = ((t[1][0] + t[1][1]) * (t[0][1] + t[1][1]) + (t[0][0] + t[0][1]) * (t[0][0] + t[1][0])) / (n * n);
    if pe == 1.0 {
        0.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

fn criterion_5() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..400);
        // Skewed class draws so rare and absent classes occur.
        let draw = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            if u < 0.7 { 0 } else if u < 0.85 { 1 } else if u < 0.95 { 2 } else { 3 }
        };
        let reference: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<usize> =
            reference.iter().map(|&r| if rng.random::<f64>() < 0.6 { r } else { draw(&mut rng) }).collect();
        let report = concatenated_report(&[(&pred, &reference)], 4).unwrap();
        for k in 0..4 {
            let want = oracle_kappa(&pred, &reference, k);
            let got = per_class_kappa_codes(&pred, &reference, k).unwrap();
            worst = worst.max((got - want).abs()).max((report.kappa[k] - want).abs());
        }
    }
    let constant = vec![Label::Mse; 250];
    let k_const = per_class_kappa(&constant, &constant, Label::Mse).unwrap();
    let k_absent = per_class_kappa(&constant, &constant, Label::W).unwrap();
    (
        worst <= KAPPA_ABS && k_const == 0.0 && k_absent == 0.0,
        format!("1000 random pairs: max |kappa - oracle| {worst:.1e} (<= {KAPPA_ABS:e}); constant class kappa {k_const}, absent class {k_absent}"),
    )
}

// ---------------------------------------------------------------- 6

fn prepared(corpus: &[(Recording, microsleep::LabelTrack)], family: Family) -> Vec<PreparedRecording> {
    corpus
        .iter()
        .map(|(rec, labels)| PreparedRecording::new(&condition_recording(rec).unwrap(), labels, family).unwrap())
        .collect()
}

fn held_out_report(net: &Network<f32>, recs: &[PreparedRecording]) -> KappaReport {
    let tracks: Vec<(Vec<usize>, Vec<usize>)> = recs
        .iter()
        .map(|r| {
            let chans = [r.eeg[0].as_slice(), r.eog[0].as_slice(), r.eog[1].as_slice()];
            let t = predict_dense_fast(net, &chans).unwrap();
            (t.labels, r.labels.iter().map(|l| l.code()).collect())
        })
        .collect();
    let views: Vec<(&[usize], &[usize])> = tracks.iter().map(|(p, r)| (p.as_slice(), r.as_slice())).collect();
    concatenated_report(&views, 4).unwrap()
}

fn criterion_6() -> (bool, String) {
    let corpus = generate_corpus(20, &SynthConfig::default(), "learn", 606).unwrap();
    let ids: Vec<String> = corpus.iter().map(|c| c.0.id.clone()).collect();
    let plan = split_by_patient(&ids, (0.7, 0.15, 0.15), 606).unwrap();
    let pick = |wanted: &[String]| -> Vec<(Recording, microsleep::LabelTrack)> {
        corpus.iter().filter(|c| wanted.contains(&c.0.id)).cloned().collect()
    };
    let train_set = prepared(&pick(&plan.train_ids), Family::Cnn);
    let test_set = prepared(&pick(&plan.test_ids), Family::Cnn);
    let mut cfg = TrainConfig::for_arch(ArchId::Cnn2, 606);
    cfg.iterations = 1;
    let (net, history) = train(build_cnn(2, 3).unwrap(), &train_set, &[], &cfg, |_, _, _| Ok(())).unwrap();
    let report = held_out_report(&net, &test_set);
    let w = report.kappa_of("W").unwrap();
    let mse = report.kappa_of("MSE").unwrap();
    (
        w >= LEARN_KAPPA_MIN && mse >= LEARN_KAPPA_MIN,
        format!(
            "2 s CNN, 1 iteration ({} batches) on {} recordings; held-out ({}) kappa W {w:.3}, MSE {mse:.3}, MSEc {:.3}, ED {:.3} (W and MSE >= {LEARN_KAPPA_MIN})",
            history.steps.len(),
            train_set.len(),
            test_set.len(),
            report.kappa[2],
            report.kappa[3]
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> (bool, String) {
    let expected = [(2, 3), (4, 4), (8, 5), (16, 6), (32, 7)];
    let mut ok = WINDOWS_S.to_vec() == expected.map(|e| e.0).to_vec();
    let mut cells = Vec::new();
    for (w, r) in expected {
        let got_r = repeat_count(w).unwrap();
        // Four base blocks plus the repeats, each mapping n -> (n - 2) / 2.
        let mut n = 200 * w as usize;
        for _ in 0..4 + r {
            n = (n - 2) / 2;
        }
        let specs = [build_cnn(w, 3).unwrap(), build_cnn(w, 1).unwrap()];
        let sym: Vec<usize> = specs.iter().map(|s| s.trunk_output_len().unwrap()).collect();
        ok &= got_r == r && n == 1 && sym.iter().all(|&s| s == 1);
        cells.push(format!("{w}s->{got_r}"));
    }
    ok &= build_cnn_embedding().unwrap().trunk_output_len().unwrap() == 1;
    (ok, format!("repeat counts {} (expected 3..7), every trunk ends at temporal size 1", cells.join(" ")))
}

// ---------------------------------------------------------------- 9, 10

struct RunArtifacts {
    checkpoints: Vec<Vec<u8>>,
    predictions: Vec<String>,
    report: String,
}

fn small_run(seed: u64) -> RunArtifacts {
    let corpus = generate_corpus(4, &SynthConfig { duration_s: 60.0, ..SynthConfig::default() }, "det", 90).unwrap();
    let cnn = prepared(&corpus, Family::Cnn);
    let lstm = prepared(&corpus, Family::CnnLstm);
    let mut checkpoints = Vec::new();
    let mut predictions = Vec::new();

    let mut cfg = TrainConfig::for_arch(ArchId::Cnn2, seed);
    cfg.iterations = 2;
    cfg.max_batches = Some(4);
    let (net, _) = train(build_cnn(2, 3).unwrap(), &cnn[..3], &cnn[3..], &cfg, |_, n, _| {
        checkpoints.push(save_params(n));
        Ok(())
    })
    .unwrap();
    let report = format_report_table(&[("2s".into(), held_out_report(&net, &cnn[3..]))]);
    let chans = [cnn[3].eeg[0].as_slice(), cnn[3].eog[0].as_slice(), cnn[3].eog[1].as_slice()];
    predictions.push(format_prediction(&predict_dense_fast(&net, &chans).unwrap(), false));

    let mut cfg = TrainConfig::for_arch(ArchId::CnnLstm, seed);
    cfg.iterations = 1;
    cfg.max_batches = Some(2);
    let (net, _) = train(build_cnn_lstm().unwrap(), &lstm[..3], &[], &cfg, |_, n, _| {
        checkpoints.push(save_params(n));
        Ok(())
    })
    .unwrap();
    let chans = [lstm[3].eeg[0].as_slice(), lstm[3].eog[0].as_slice(), lstm[3].eog[1].as_slice()];
    predictions.push(format_prediction(&predict_cnn_lstm(&net, &chans).unwrap(), false));
    RunArtifacts { checkpoints, predictions, report }
}

fn embedding_run(seed: u64) -> (Vec<u64>, f64, f64, usize) {
    let net = Network::<f32>::new(build_cnn_embedding().unwrap(), 3).unwrap();
    let (rec, labels) = generate(&SynthConfig { duration_s: 60.0, ..SynthConfig::default() }, 12).unwrap();
    let rec = condition_recording(&rec).unwrap();
    let chans: Vec<Vec<f32>> = [O1M2, E1M1, E2M1].iter().map(|n| normalize_cnn(rec.channel(n).unwrap())).collect();
    let views: Vec<&[f32]> = chans.iter().map(Vec::as_slice).collect();
    let feats = extract_features(&net, &views, &labels.labels, 100).unwrap();
    let x: Vec<f64> = feats.vectors.iter().map(|&v| f64::from(v)).collect();
    let res = tsne(&x, feats.len(), feats.dim, &TsneConfig::default(), seed).unwrap();
    (res.coords.iter().map(|c| c.to_bits()).collect(), res.kl_initial, res.kl_final, feats.len())
}

fn criterion_9_10() -> ((bool, String), (bool, String)) {
    let a = small_run(19);
    let b = small_run(19);
    let c = small_run(20);
    let same = a.checkpoints == b.checkpoints && a.predictions == b.predictions && a.report == b.report;
    let differs = a.checkpoints != c.checkpoints;

    let mut kl_lines = Vec::new();
    let mut kl_ok = true;
    let mut tsne_same = true;
    for seed in [1, 2] {
        let (x, kl0, kl1, n) = embedding_run(seed);
        let (y, _, _, _) = embedding_run(seed);
        tsne_same &= x == y;
        kl_ok &= kl1 < kl0;
        kl_lines.push(format!("seed {seed}: {n} points KL {kl0:.3} -> {kl1:.3}"));
    }
    let c9 = (
        same && tsne_same && differs,
        format!(
            "{} checkpoints, {} prediction files, report and t-SNE coordinates byte-identical across reruns: {}; other seed changes checkpoints: {differs}",
            a.checkpoints.len(),
            a.predictions.len(),
            same && tsne_same
        ),
    );

    // Three points, two coincident: the pair must stay closer than the third.
    let pts = [0.3, -1.2, 0.3, -1.2, 4.0, 2.5];
    let cfg = TsneConfig { perplexity: 1.5, ..TsneConfig::default() };
    let mut small_ok = 0;
    for seed in 0..10 {
        let r = tsne(&pts, 3, 2, &cfg, seed).unwrap();
        let d = |i: usize, j: usize| ((r.coords[2 * i] - r.coords[2 * j]).powi(2) + (r.coords[2 * i + 1] - r.coords[2 * j + 1]).powi(2)).sqrt();
        if d(0, 1) < d(0, 2) && d(0, 1) < d(1, 2) && r.kl_final < r.kl_initial {
            small_ok += 1;
        }
    }
    let c10 = (kl_ok && small_ok == 10, format!("{}; coincident pair closest in {small_ok}/10 seeds", kl_lines.join(", ")));
    (c9, c10)
}

#[test]
fn acceptance_suite() {
    let mut lines = Vec::new();
    run(&mut lines, "C1", "gradient integrity", criterion_1);
    run(&mut lines, "C2", "dense-inference equivalence", criterion_2);
    run(&mut lines, "C3", "dense-inference speed", criterion_3);
    run(&mut lines, "C4", "filter correctness", criterion_4);
    run(&mut lines, "C5", "kappa oracle", criterion_5);
    run(&mut lines, "C6", "end-to-end learnability", criterion_6);
    run(&mut lines, "C8", "architecture ladder", criterion_8);
    let mut c10 = None;
    run(&mut lines, "C9", "determinism", || {
        let (a, b) = criterion_9_10();
        c10 = Some(b);
        a
    });
    run(&mut lines, "C10", "t-SNE sanity", || c10.take().unwrap());
    println!("C7 reference-kappa reproduction: not in the default suite (cargo test --test acceptance -- --ignored)");
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---------------------------------------------------------------- 7

/// Needs `MICROSLEEP_MWT_DIR` pointing at `<id>.edf` + `<id>.labels` pairs
/// of the full MWT corpus; trains the 16 s CNN for three iterations.
#[test]
#[ignore]
fn reference_kappa_reproduction() {
    let dir = std::env::var("MICROSLEEP_MWT_DIR").expect("set MICROSLEEP_MWT_DIR to the MWT corpus directory");
    let mut ids: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "edf").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    ids.sort();
    let load = |wanted: &[String]| -> Vec<PreparedRecording> {
        wanted
            .iter()
            .map(|id| {
                let raw = parse_edf(&std::fs::read(format!("{dir}/{id}.edf")).unwrap()).unwrap();
                let rec = condition_recording(&raw.select_channels(&[O1M2, O2M1, E1M1, E2M1]).unwrap()).unwrap();
                let text = std::fs::read_to_string(format!("{dir}/{id}.labels")).unwrap();
                let labels = parse_labels(&text, rec.duration_samples()).unwrap();
                PreparedRecording::new(&rec, &labels, Family::Cnn).unwrap()
            })
            .collect()
    };
    let plan = split_by_patient(&ids, (0.7, 0.15, 0.15), 1).unwrap();
    let (train_set, val, test) = (load(&plan.train_ids), load(&plan.val_ids), load(&plan.test_ids));
    let cfg = TrainConfig::for_arch(ArchId::Cnn16, 1);
    let (net, _) = train(build_cnn(16, 3).unwrap(), &train_set, &[], &cfg, |_, _, _| Ok(())).unwrap();
    let v = held_out_report(&net, &val);
    let t = held_out_report(&net, &test);
    let checks = [
        ("validation W", v.kappa_of("W").unwrap(), 0.67),
        ("validation MSE", v.kappa_of("MSE").unwrap(), 0.69),
        ("test W", t.kappa_of("W").unwrap(), 0.59),
        ("test MSE", t.kappa_of("MSE").unwrap(), 0.69),
    ];
    let mut ok = true;
    for (name, got, want) in checks {
        let pass = (got - want).abs() <= REFERENCE_TOL;
        ok &= pass;
        println!("{} C7 {name}: kappa {got:.3} vs {want} (+-{REFERENCE_TOL})", if pass { "PASS" } else { "FAIL" });
    }
    assert!(ok);
}
