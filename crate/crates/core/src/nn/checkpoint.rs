//! Checkpoint container: a text metadata block followed by raw little-endian
//! `f32` tensors in declaration order.
//!
//! ```text
//! MWT-CHECKPOINT
//! version 1
//! dtype f32le
//! family cnn
//! input 400 3
//! classes 4
//! layer noise 0.0005
//! layer conv 8 valid
//! ...
//! tensor 1 kernel 3 3 8
//! ...
//! end
//! <payload>
//! ```

use super::layers::{LayerSpec, Padding, Param};
use super::network::{param_shapes, Family, Network, NetworkSpec};
use super::tensor::Scalar;
use crate::error::{Error, Result};

const MAGIC: &str = "MWT-CHECKPOINT";
const VERSION: u32 = 1;

fn layer_token(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::GaussianNoise { std } => format!("noise {std}"),
        LayerSpec::Conv1d { filters, padding } => format!(
            "conv {filters} {}",
            match padding {
                Padding::Valid => "valid",
                Padding::Same => "same",
            }
        ),
        LayerSpec::BatchNorm { epsilon, momentum } => format!("batchnorm {epsilon} {momentum}"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::MaxPool => "maxpool".into(),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::Dropout { rate } => format!("dropout {rate}"),
        LayerSpec::Dense { units } => format!("dense {units}"),
        LayerSpec::Softmax { classes } => format!("softmax {classes}"),
        LayerSpec::Sequence => "sequence".into(),
        LayerSpec::Lstm { hidden } => format!("lstm {hidden}"),
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| bad(format!("bad or missing {what}")))
}

fn parse_layer(rest: &[&str]) -> Result<LayerSpec> {
    let arg = |i: usize| rest.get(i).copied();
    Ok(match rest.first().copied() {
        Some("noise") => LayerSpec::GaussianNoise { std: parse_num(arg(1), "noise std")? },
        Some("conv") => LayerSpec::Conv1d {
            filters: parse_num(arg(1), "filters")?,
            padding: match arg(2) {
                Some("valid") => Padding::Valid,
                Some("same") => Padding::Same,
                _ => return Err(bad("bad conv padding")),
            },
        },
        Some("batchnorm") => LayerSpec::BatchNorm {
            epsilon: parse_num(arg(1), "epsilon")?,
            momentum: parse_num(arg(2), "momentum")?,
        },
        Some("relu") => LayerSpec::Relu,
        Some("maxpool") => LayerSpec::MaxPool,
        Some("flatten") => LayerSpec::Flatten,
        Some("dropout") => LayerSpec::Dropout { rate: parse_num(arg(1), "dropout rate")? },
        Some("dense") => LayerSpec::Dense { units: parse_num(arg(1), "units")? },
        Some("softmax") => LayerSpec::Softmax { classes: parse_num(arg(1), "classes")? },
        Some("sequence") => LayerSpec::Sequence,
        Some("lstm") => LayerSpec::Lstm { hidden: parse_num(arg(1), "hidden")? },
        other => return Err(bad(format!("unknown layer kind {other:?}"))),
    })
}

/// Serializes a network's spec and parameters (stored as `f32`).
pub fn save_params<F: Scalar>(net: &Network<F>) -> Vec<u8> {
    let spec = net.spec();
    let mut meta = format!(
        "{MAGIC}\nversion {VERSION}\ndtype f32le\nfamily {}\ninput {} {}\nclasses {}\n",
        spec.family.name(),
        spec.window_samples,
        spec.in_channels,
        spec.n_classes
    );
    for layer in &spec.layers {
        meta.push_str(&format!("layer {}\n", layer_token(layer)));
    }
    for (i, layer) in net.layers().iter().enumerate() {
        for p in &layer.params {
            let dims: Vec<String> = p.shape.iter().map(usize::to_string).collect();
            meta.push_str(&format!("tensor {i} {} {}\n", p.name, dims.join(" ")));
        }
    }
    meta.push_str("end\n");
    let mut out = meta.into_bytes();
    for p in net.params() {
        for &v in &p.value {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Inverse of [`save_params`]. With `expected`, the stored architecture must
/// match it exactly.
pub fn load_params(bytes: &[u8], expected: Option<&NetworkSpec>) -> Result<Network<f32>> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated metadata"))?;
        pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| bad("metadata is not UTF-8"))
    };

    if next_line()? != MAGIC {
        return Err(bad("missing magic string"));
    }
    let version: u32 = parse_num(next_line()?.strip_prefix("version "), "version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version} (expected {VERSION})")));
    }
    if next_line()? != "dtype f32le" {
        return Err(bad("unsupported dtype"));
    }
    let family = match next_line()? {
        "family cnn" => Family::Cnn,
        "family cnn_lstm" => Family::CnnLstm,
        other => return Err(bad(format!("bad family line {other:?}"))),
    };
    let input: Vec<&str> = next_line()?.split_whitespace().collect();
    if input.first() != Some(&"input") {
        return Err(bad("missing input line"));
    }
    let window_samples: usize = parse_num(input.get(1).copied(), "window")?;
    let in_channels: usize = parse_num(input.get(2).copied(), "channels")?;
    let n_classes: usize = parse_num(next_line()?.strip_prefix("classes "), "classes")?;

    let mut layers = Vec::new();
    let mut tensors: Vec<(usize, String, Vec<usize>)> = Vec::new();
    loop {
        let line = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("layer") => layers.push(parse_layer(&toks[1..])?),
            Some("tensor") => {
                let idx: usize = parse_num(toks.get(1).copied(), "tensor layer index")?;
                let name = toks.get(2).ok_or_else(|| bad("tensor without name"))?.to_string();
                let shape = toks[3..]
                    .iter()
                    .map(|t| t.parse::<usize>().map_err(|_| bad("bad tensor dimension")))
                    .collect::<Result<Vec<_>>>()?;
                tensors.push((idx, name, shape));
            }
            Some("end") => break,
            _ => return Err(bad(format!("unexpected metadata line {line:?}"))),
        }
    }
    let spec = NetworkSpec { family, window_samples, in_channels, n_classes, layers };
    if let Some(exp) = expected {
        if *exp != spec {
            return Err(Error::Shape("checkpoint architecture differs from the expected network".into()));
        }
    }

    // Rebuild parameter groups against the shapes the architecture implies.
    let mut payload = &bytes[pos..];
    let mut groups = Vec::with_capacity(spec.layers.len());
    let mut declared = tensors.into_iter();
    let (mut len, mut ch) = (spec.window_samples, spec.in_channels);
    for (i, ls) in spec.layers.iter().enumerate() {
        let mut group = Vec::new();
        for (name, shape, trainable) in param_shapes(ls, ch) {
            match declared.next() {
                Some((di, dn, ds)) if di == i && dn == name && ds == shape => {}
                _ => return Err(Error::Shape(format!("tensor table disagrees with layer {i} ({name})"))),
            }
            let n: usize = shape.iter().product();
            if payload.len() < 4 * n {
                return Err(bad("payload truncated"));
            }
            let value = payload[..4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            payload = &payload[4 * n..];
            group.push(Param::new(name, shape, value, trainable));
        }
        groups.push(group);
        (len, ch) = ls.output_shape(len, ch)?;
    }
    if declared.next().is_some() {
        return Err(bad("extra tensors declared"));
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Network::from_params(spec, groups)
}
