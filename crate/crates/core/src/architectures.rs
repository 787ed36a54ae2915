//! The segmenter family: sliding-window CNNs for 2–32 s windows, the
//! single-EEG-channel variant, the embedding variant and the CNN-LSTM.
//!
//! Every CNN block is `Conv1d(3, valid) -> BatchNorm -> ReLU -> MaxPool(2)`,
//! mapping a temporal size `n` to `floor((n - 2) / 2)`. Four base blocks with
//! 8, 16, 32 and 64 filters are followed by a window-dependent number of
//! 128-filter blocks, chosen so the last block's temporal size is exactly 1.

use std::fmt;
use std::str::FromStr;

use crate::dataset::Weighting;
use crate::error::{Error, Result};
use crate::nn::{Family, LayerSpec, NetworkSpec, Padding};
use crate::SAMPLE_RATE_HZ;

pub const BASE_FILTERS: [usize; 4] = [8, 16, 32, 64];
pub const DEEP_FILTERS: usize = 128;
pub const NOISE_STD: f64 = 0.0005;
pub const DROPOUT_RATE: f64 = 0.5;
pub const DENSE_UNITS: usize = 64;
pub const LSTM_HIDDEN: usize = 128;
pub const EMBEDDING_FILTERS: usize = 64;

/// CNN-LSTM geometry: 1-s windows advancing by 0.25 s.
pub const LSTM_WINDOW_SAMPLES: usize = 200;
pub const LSTM_STRIDE_SAMPLES: usize = 50;
/// Two 128-filter blocks bring a 200-sample window down to size 1.
pub const LSTM_DEEP_BLOCKS: usize = 2;

/// Supported window lengths in seconds.
pub const WINDOWS_S: [u32; 5] = [2, 4, 8, 16, 32];

/// Number of 128-filter blocks after the base blocks: one more per doubling.
pub fn repeat_count(window_seconds: u32) -> Result<usize> {
    match window_seconds {
        2 => Ok(3),
        4 => Ok(4),
        8 => Ok(5),
        16 => Ok(6),
        32 => Ok(7),
        other => Err(Error::UnsupportedWindow(other)),
    }
}

fn push_block(layers: &mut Vec<LayerSpec>, filters: usize) {
    layers.push(LayerSpec::conv(filters));
    layers.push(LayerSpec::batch_norm());
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::MaxPool);
}

fn window_samples(window_seconds: u32) -> usize {
    (f64::from(window_seconds) * SAMPLE_RATE_HZ) as usize
}

fn cnn_trunk(n_channels: usize, deep_blocks: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::GaussianNoise { std: NOISE_STD }];
    for f in BASE_FILTERS {
        push_block(&mut layers, f);
    }
    for _ in 0..deep_blocks {
        push_block(&mut layers, DEEP_FILTERS);
    }
    debug_assert!(n_channels > 0);
    layers
}

fn cnn_head(layers: &mut Vec<LayerSpec>) {
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::Dense { units: DENSE_UNITS },
        LayerSpec::Relu,
        LayerSpec::Softmax { classes: 4 },
    ]);
}

fn check_ladder(spec: NetworkSpec) -> Result<NetworkSpec> {
    let len = spec.trunk_output_len()?;
    if len != 1 {
        return Err(Error::Shape(format!("trunk ends at temporal size {len}, expected 1")));
    }
    Ok(spec)
}

/// Sliding-window CNN over `window_seconds` of `n_channels` inputs.
pub fn build_cnn(window_seconds: u32, n_channels: usize) -> Result<NetworkSpec> {
    let repeats = repeat_count(window_seconds)?;
    if n_channels != 1 && n_channels != 3 {
        return Err(Error::InvalidArgument(format!("{n_channels} input channels (expected 1 or 3)")));
    }
    let mut layers = cnn_trunk(n_channels, repeats);
    cnn_head(&mut layers);
    check_ladder(NetworkSpec {
        family: Family::Cnn,
        window_samples: window_samples(window_seconds),
        in_channels: n_channels,
        n_classes: 4,
        layers,
    })
}

/// The 16-s, 3-channel CNN with an extra 64-filter convolution block whose
/// output is a 64-long feature vector per window.
///
/// The trunk already ends at temporal size 1, so the extra convolution uses
/// `same` padding (only its center tap sees data).
pub fn build_cnn_embedding() -> Result<NetworkSpec> {
    let mut layers = cnn_trunk(3, repeat_count(16)?);
    layers.extend([
        LayerSpec::Conv1d { filters: EMBEDDING_FILTERS, padding: Padding::Same },
        LayerSpec::batch_norm(),
        LayerSpec::Relu,
    ]);
    cnn_head(&mut layers);
    check_ladder(NetworkSpec {
        family: Family::Cnn,
        window_samples: window_samples(16),
        in_channels: 3,
        n_classes: 4,
        layers,
    })
}

/// CNN encoder on 1-s windows, LSTM over the window sequence, and a per-step
/// two-class softmax (MSE vs everything else).
pub fn build_cnn_lstm() -> Result<NetworkSpec> {
    let mut layers = cnn_trunk(3, LSTM_DEEP_BLOCKS);
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Sequence,
        LayerSpec::Lstm { hidden: LSTM_HIDDEN },
        LayerSpec::Softmax { classes: 2 },
    ]);
    check_ladder(NetworkSpec {
        family: Family::CnnLstm,
        window_samples: LSTM_WINDOW_SAMPLES,
        in_channels: 3,
        n_classes: 2,
        layers,
    })
}

/// Number of CNN-LSTM decision points for a recording of `n` samples.
pub fn lstm_window_count(n: usize) -> Result<usize> {
    if n < LSTM_WINDOW_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "recording of {n} samples is shorter than one {LSTM_WINDOW_SAMPLES}-sample window"
        )));
    }
    Ok((n - LSTM_WINDOW_SAMPLES) / LSTM_STRIDE_SAMPLES + 1)
}

/// The eight network configurations by their short identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchId {
    Cnn2,
    Cnn4,
    Cnn8,
    Cnn16,
    Cnn32,
    /// 16-s CNN trained with uniform class weights.
    Cnn16Uniform,
    /// 16-s CNN on a single EEG channel.
    Cnn16SingleChannel,
    CnnLstm,
}

impl ArchId {
    pub const ALL: [ArchId; 8] = [
        ArchId::Cnn2,
        ArchId::Cnn4,
        ArchId::Cnn8,
        ArchId::Cnn16,
        ArchId::Cnn32,
        ArchId::Cnn16Uniform,
        ArchId::Cnn16SingleChannel,
        ArchId::CnnLstm,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ArchId::Cnn2 => "2s",
            ArchId::Cnn4 => "4s",
            ArchId::Cnn8 => "8s",
            ArchId::Cnn16 => "16s",
            ArchId::Cnn32 => "32s",
            ArchId::Cnn16Uniform => "16s_u",
            ArchId::Cnn16SingleChannel => "16s_1c",
            ArchId::CnnLstm => "cnn_lstm",
        }
    }

    pub fn family(self) -> Family {
        match self {
            ArchId::CnnLstm => Family::CnnLstm,
            _ => Family::Cnn,
        }
    }

    pub fn window_seconds(self) -> Option<u32> {
        match self {
            ArchId::Cnn2 => Some(2),
            ArchId::Cnn4 => Some(4),
            ArchId::Cnn8 => Some(8),
            ArchId::Cnn16 | ArchId::Cnn16Uniform | ArchId::Cnn16SingleChannel => Some(16),
            ArchId::Cnn32 => Some(32),
            ArchId::CnnLstm => None,
        }
    }

    pub fn in_channels(self) -> usize {
        if self == ArchId::Cnn16SingleChannel { 1 } else { 3 }
    }

    pub fn weighting(self) -> Weighting {
        if self == ArchId::Cnn16Uniform { Weighting::Uniform } else { Weighting::Inverse }
    }

    pub fn spec(self) -> Result<NetworkSpec> {
        match self.window_seconds() {
            Some(w) => build_cnn(w, self.in_channels()),
            None => build_cnn_lstm(),
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}
