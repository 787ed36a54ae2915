use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use microsleep::architectures::{build_cnn_embedding, ArchId};
use microsleep::conditioning::{condition_recording, normalize_cnn, normalize_lstm};
use microsleep::dataset::{split_by_patient, PreparedRecording, Weighting};
use microsleep::embedding::{extract_features, format_embedding, tsne, TsneConfig};
use microsleep::evaluation::{binarize_mse, concatenated_report, format_report_table};
use microsleep::ingest::{format_labels, parse_edf, parse_labels, write_edf};
use microsleep::nn::{load_params, save_params, Family, Network};
use microsleep::segmentation::{
    apply_duration_criteria, coarsen_majority, episodes_from_labels, flag_long_episodes, format_episodes,
    format_prediction, parse_prediction, predict_cnn_lstm, predict_dense_fast, predict_dense_naive,
};
use microsleep::synthgen::{generate_corpus, SynthConfig};
use microsleep::trainer::{train as run_training, TrainConfig};
use microsleep::{Label, Recording, E1M1, E2M1, O1M2, O2M1, SAMPLE_RATE_HZ};

use crate::config::Settings;
use crate::outputs::Outputs;
use crate::sigfile::{read_sig, write_sig};
use crate::Common;

/// Coarsening block of the display tracks: 0.5 s.
const COARSE_SAMPLES: usize = 100;
const MSE_MIN_S: f64 = 1.0;
const MSE_MAX_S: f64 = 15.0;
const SCORING_CHANNELS: [&str; 4] = [O1M2, O2M1, E1M1, E2M1];

fn settings(common: &Common) -> Result<Settings> {
    Settings::load(common.config.as_deref())
}

fn seed(s: &Settings, common: &Common) -> Result<u64> {
    s.pick_or(common.seed, "seed", 0)
}

fn arch(s: &Settings, common: &Common) -> Result<Option<ArchId>> {
    Ok(s.pick::<String>(common.arch.clone(), "arch")?.map(|a| a.parse()).transpose()?)
}

fn valid_arch_ids() -> String {
    ArchId::ALL.map(ArchId::id).join(", ")
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| anyhow!("cannot derive a recording id from {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn is_sig(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("sig"))
}

/// Loads an EDF (band-passed here) or an already conditioned `.sig` file,
/// restricted to `names`. The recording id is the file stem.
fn load_conditioned(path: &Path, names: &[&str]) -> Result<Recording> {
    let bytes = read(path)?;
    let raw = if is_sig(path) { read_sig(&bytes)? } else { parse_edf(&bytes)? };
    if raw.rate_hz != SAMPLE_RATE_HZ {
        bail!("{}: sampled at {} Hz, the networks expect {SAMPLE_RATE_HZ} Hz", path.display(), raw.rate_hz);
    }
    let mut rec = raw.select_channels(names).with_context(|| format!("{}", path.display()))?;
    if !is_sig(path) {
        rec = condition_recording(&rec)?;
    }
    rec.id = file_stem(path)?;
    Ok(rec)
}

/// Network input channels, normalized for the network family.
fn network_inputs(net: &Network<f32>, path: &Path) -> Result<(Recording, Vec<Vec<f32>>)> {
    let spec = net.spec();
    let names: &[&str] = match spec.in_channels {
        3 => &[O1M2, E1M1, E2M1],
        1 => &[O1M2],
        c => bail!("checkpoint expects {c} input channels; supported are 1 and 3"),
    };
    let rec = load_conditioned(path, names)?;
    let chans = rec
        .channels()
        .iter()
        .map(|c| match spec.family {
            Family::Cnn => normalize_cnn(&c.samples),
            Family::CnnLstm => normalize_lstm(&c.samples),
        })
        .collect();
    Ok((rec, chans))
}

fn load_network(s: &Settings, common: &Common, flag: Option<PathBuf>) -> Result<Network<f32>> {
    let path = s.require_path(flag, "checkpoint")?;
    let bytes = read(&path)?;
    let expected = arch(s, common)?.map(ArchId::spec).transpose()?;
    load_params(&bytes, expected.as_ref()).with_context(|| format!("loading {}", path.display()))
}

pub fn condition(input: &Path, common: &Common) -> Result<()> {
    let s = settings(common)?;
    let rec = parse_edf(&read(input)?).with_context(|| format!("parsing {}", input.display()))?;
    let mut conditioned = condition_recording(&rec)?;
    conditioned.id = file_stem(input)?;
    let out = s.path(common.out.clone(), "out")?.unwrap_or_else(|| input.with_extension("sig"));
    let mut outputs = Outputs::new();
    outputs.write(&out, &write_sig(&conditioned))?;
    outputs.commit();
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `<id>.edf` (or `<id>.sig`) recordings with `<id>.labels`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train/validation/test fractions.
    #[arg(long, value_name = "F,F,F")]
    pub split: Option<String>,
    /// `inverse` or `uniform` (default: the architecture's own).
    #[arg(long)]
    pub weighting: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Cap on batches per iteration, for quick runs.
    #[arg(long)]
    pub max_batches: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Train the 16-s network with the extra 64-filter feature layer.
    #[arg(long)]
    pub embedding: bool,
    #[command(flatten)]
    pub common: Common,
}

fn parse_split(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split needs three comma-separated fractions, got {text:?}"),
    }
}

/// `(id, recording path, label path)` for every labelled recording in `dir`.
fn discover_corpus(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("edf" | "sig")) {
            continue;
        }
        let id = file_stem(&path)?;
        let labels = path.with_extension("labels");
        if !labels.exists() {
            bail!("recording {id} has no label file {}", labels.display());
        }
        found.push((id, path, labels));
    }
    found.sort();
    if let Some(w) = found.windows(2).find(|w| w[0].0 == w[1].0) {
        bail!("recording {} appears as both EDF and .sig", w[0].0);
    }
    if found.is_empty() {
        bail!("no recordings in {}", dir.display());
    }
    Ok(found)
}

fn prepare(path: &Path, labels: &Path, family: Family) -> Result<PreparedRecording> {
    let rec = load_conditioned(path, &SCORING_CHANNELS)?;
    let track = parse_labels(&read_text(labels)?, rec.duration_samples())
        .with_context(|| format!("labels of {}", rec.id))?;
    Ok(PreparedRecording::new(&rec, &track, family)?)
}

fn to_core_error(e: anyhow::Error) -> microsleep::Error {
    microsleep::Error::Io(std::io::Error::other(format!("{e:#}")))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let seed = seed(&s, &a.common)?;
    let arch = arch(&s, &a.common)?.ok_or_else(|| anyhow!("missing --arch (valid: {})", valid_arch_ids()))?;
    let embedding = s.switch(a.embedding, "embedding")?;
    let spec = if embedding {
        if arch != ArchId::Cnn16 {
            bail!("the embedding network is the 16s CNN; got --arch {arch}");
        }
        build_cnn_embedding()?
    } else {
        arch.spec()?
    };
    let mut cfg = TrainConfig::for_arch(arch, seed);
    if let Some(w) = s.pick::<String>(a.weighting.clone(), "weighting")? {
        cfg.weighting = w.parse::<Weighting>()?;
    }
    cfg.iterations = s.pick_or(a.iterations, "iterations", cfg.iterations)?;
    cfg.batch_size = s.pick_or(a.batch_size, "batch_size", cfg.batch_size)?;
    cfg.max_batches = s.pick(a.max_batches, "max_batches")?;
    cfg.optimizer.learning_rate = s.pick_or(a.learning_rate, "learning_rate", cfg.optimizer.learning_rate)?;
    cfg.validate()?;

    let data = s.require_path(a.data.clone(), "data")?;
    let out = s.require_path(a.common.out.clone(), "out")?;
    let split = parse_split(&s.pick_or(a.split.clone(), "split", "0.7,0.15,0.15".to_string())?)?;

    let corpus = discover_corpus(&data)?;
    let ids: Vec<String> = corpus.iter().map(|c| c.0.clone()).collect();
    let plan = split_by_patient(&ids, split, seed)?;
    let load = |wanted: &[String]| -> Result<Vec<PreparedRecording>> {
        wanted
            .iter()
            .map(|id| {
                let (_, path, labels) = corpus.iter().find(|c| &c.0 == id).expect("split ids come from the corpus");
                prepare(path, labels, spec.family)
            })
            .collect()
    };
    let train_set = load(&plan.train_ids)?;
    let val_set = load(&plan.val_ids)?;
    eprintln!(
        "training {} on {} recordings ({} validation, {} held out)",
        if embedding { "16s embedding".to_string() } else { arch.to_string() },
        train_set.len(),
        val_set.len(),
        plan.test_ids.len()
    );

    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    let mut split_text = String::from("# role,id\n");
    for (role, list) in [("train", &plan.train_ids), ("validation", &plan.val_ids), ("test", &plan.test_ids)] {
        for id in list {
            split_text.push_str(&format!("{role},{id}\n"));
        }
    }
    outputs.write(&out.join("split.csv"), split_text.as_bytes())?;

    let mut seen_steps = 0;
    let (_, history) = run_training(spec, &train_set, &val_set, &cfg, |it, net, hist| {
        let steps = &hist.steps[seen_steps..];
        seen_steps = hist.steps.len();
        let mean = steps.iter().map(|s| s.1).sum::<f64>() / steps.len().max(1) as f64;
        let kappas = hist
            .snapshots
            .last()
            .filter(|snap| snap.iteration == it)
            .map(|snap| {
                let cells: Vec<String> =
                    snap.report.class_names.iter().zip(&snap.report.kappa).map(|(n, k)| format!("{n} {k:.3}")).collect();
                format!(", validation kappa {}", cells.join(" "))
            })
            .unwrap_or_default();
        eprintln!("iteration {it}: {} batches, mean loss {mean:.4}{kappas}", steps.len());
        outputs.write(&out.join(format!("checkpoint_{it:02}.ckpt")), &save_params(net)).map_err(to_core_error)
    })?;
    outputs.write(&out.join("history.csv"), history.to_text().as_bytes())?;
    outputs.commit();
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// EDF recording or conditioned `.sig` file.
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score every window independently instead of sharing computation.
    #[arg(long)]
    pub naive: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let net = load_network(&s, &a.common, a.checkpoint.clone())?;
    let naive = s.switch(a.naive, "naive")?;
    let out = s.require_path(a.common.out.clone(), "out")?;
    let (rec, chans) = network_inputs(&net, &a.input)?;
    let views: Vec<&[f32]> = chans.iter().map(Vec::as_slice).collect();
    let track = match (net.spec().family, naive) {
        (Family::CnnLstm, true) => bail!("--naive applies to the sliding-window CNNs only"),
        (Family::CnnLstm, false) => predict_cnn_lstm(&net, &views)?,
        (Family::Cnn, true) => predict_dense_naive(&net, &views)?,
        (Family::Cnn, false) => predict_dense_fast(&net, &views)?,
    };
    let coarse = coarsen_majority(&track, COARSE_SAMPLES)?;
    let labels = apply_duration_criteria(&coarse.as_labels(), rec.rate_hz, MSE_MIN_S);
    let mut episodes: Vec<_> = episodes_from_labels(&labels).into_iter().filter(|e| e.class != Label::W).collect();
    flag_long_episodes(&mut episodes, rec.rate_hz, MSE_MAX_S);

    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    outputs.write(&out.join(format!("{}.pred.csv", rec.id)), format_prediction(&track, false).as_bytes())?;
    outputs.write(&out.join(format!("{}.pred_0.5s.csv", rec.id)), format_prediction(&coarse, true).as_bytes())?;
    outputs.write(&out.join(format!("{}.episodes.csv", rec.id)), format_episodes(&episodes).as_bytes())?;
    outputs.commit();
    let mse = episodes.iter().filter(|e| e.class == Label::Mse).count();
    eprintln!("{}: {} samples, {mse} MSE episodes", rec.id, track.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of `<id>.pred.csv` files.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Directory of reference `<id>.labels` files. A recording (`<id>.edf`
    /// or `<id>.sig`) beside a label file fixes its length.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn reference_length(label_dir: &Path, id: &str) -> Result<Option<usize>> {
    for ext in ["sig", "edf"] {
        let path = label_dir.join(format!("{id}.{ext}"));
        if path.exists() {
            let bytes = read(&path)?;
            let rec = if ext == "sig" { read_sig(&bytes)? } else { parse_edf(&bytes)? };
            return Ok(Some(rec.duration_samples()));
        }
    }
    Ok(None)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let pred_dir = s.require_path(a.pred.clone(), "pred")?;
    let label_dir = s.require_path(a.labels.clone(), "labels")?;
    let name = arch(&s, &a.common)?.map_or_else(|| "model".to_string(), |a| a.to_string());

    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&pred_dir).with_context(|| format!("listing {}", pred_dir.display()))? {
        let path = entry?.path();
        if let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".pred.csv")) {
            files.push((id.to_string(), path));
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no .pred.csv files in {}", pred_dir.display());
    }

    let mut pairs: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut n_classes = None;
    for (id, path) in &files {
        let track = parse_prediction(&read_text(path)?).with_context(|| format!("recording {id}"))?;
        if *n_classes.get_or_insert(track.n_classes) != track.n_classes {
            bail!("recording {id}: {} classes, earlier predictions have {}", track.n_classes, n_classes.unwrap());
        }
        if let Some(len) = reference_length(&label_dir, id)? {
            if len != track.len() {
                bail!("recording {id}: prediction has {} samples, reference recording has {len}", track.len());
            }
        }
        let label_path = label_dir.join(format!("{id}.labels"));
        let reference = parse_labels(&read_text(&label_path)?, track.len())
            .with_context(|| format!("recording {id}: reference labels do not fit the prediction"))?;
        let ref_codes = match track.n_classes {
            2 => binarize_mse(&reference.labels),
            _ => reference.labels.iter().map(|l| l.code()).collect(),
        };
        pairs.push((track.labels, ref_codes));
    }
    let views: Vec<(&[usize], &[usize])> = pairs.iter().map(|(p, r)| (p.as_slice(), r.as_slice())).collect();
    let report = concatenated_report(&views, n_classes.unwrap_or(4))?;
    let table = format_report_table(&[(name, report)]);
    print!("{table}");
    if let Some(out) = s.path(a.common.out.clone(), "out")? {
        let mut outputs = Outputs::new();
        outputs.write(&out, table.as_bytes())?;
        outputs.commit();
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// EDF recording or conditioned `.sig` file.
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Reference labels (default: `<input stem>.labels` beside the input).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Keep every n-th sample.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub tsne_iterations: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let net = load_network(&s, &a.common, a.checkpoint.clone())?;
    let seed = seed(&s, &a.common)?;
    let out = s.require_path(a.common.out.clone(), "out")?;
    let defaults = TsneConfig::default();
    let cfg = TsneConfig {
        perplexity: s.pick_or(a.perplexity, "perplexity", defaults.perplexity)?,
        iterations: s.pick_or(a.tsne_iterations, "tsne_iterations", defaults.iterations)?,
        ..defaults
    };
    let stride = s.pick_or(a.stride, "stride", 100)?;
    let (rec, chans) = network_inputs(&net, &a.input)?;
    let label_path = s.path(a.labels.clone(), "labels")?.unwrap_or_else(|| a.input.with_extension("labels"));
    let labels = parse_labels(&read_text(&label_path)?, rec.duration_samples())?;
    let views: Vec<&[f32]> = chans.iter().map(Vec::as_slice).collect();
    let features = extract_features(&net, &views, &labels.labels, stride)?;
    let x: Vec<f64> = features.vectors.iter().map(|&v| f64::from(v)).collect();
    let result = tsne(&x, features.len(), features.dim, &cfg, seed)?;
    let mut outputs = Outputs::new();
    outputs.write(&out, format_embedding(&result.coords, &features).as_bytes())?;
    outputs.commit();
    eprintln!("{} points, KL {:.4} -> {:.4}", features.len(), result.kl_initial, result.kl_final);
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of recordings.
    #[arg(long)]
    pub count: Option<usize>,
    /// Length of each recording in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Recording id prefix.
    #[arg(long)]
    pub prefix: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let seed = seed(&s, &a.common)?;
    let out = s.require_path(a.common.out.clone(), "out")?;
    let base = SynthConfig { duration_s: s.pick_or(a.duration, "duration", 300.0)?, ..SynthConfig::default() };
    let count = s.pick_or(a.count, "count", 20)?;
    let prefix = s.pick_or(a.prefix.clone(), "prefix", "synth".to_string())?;
    let corpus = generate_corpus(count, &base, &prefix, seed)?;
    let mut outputs = Outputs::new();
    outputs.dir(&out)?;
    for (rec, labels) in &corpus {
        outputs.write(&out.join(format!("{}.edf", rec.id)), &write_edf(rec)?)?;
        outputs.write(&out.join(format!("{}.labels", rec.id)), format_labels(labels).as_bytes())?;
    }
    outputs.commit();
    eprintln!("wrote {count} recordings to {}", out.display());
    Ok(())
}
