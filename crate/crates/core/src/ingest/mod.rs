//! Recordings, scoring labels and their on-disk formats.

mod edf;
mod labels;

pub use edf::{parse_edf, write_edf};
pub use labels::{format_labels, parse_labels};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Expert scoring class. The integer codes are stable: they index network
/// outputs and appear in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Label {
    #[default]
    W = 0,
    Mse = 1,
    MseCandidate = 2,
    Drowsy = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::W, Label::Mse, Label::MseCandidate, Label::Drowsy];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Label> {
        Label::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::W => "W",
            Label::Mse => "MSE",
            Label::MseCandidate => "MSEc",
            Label::Drowsy => "ED",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" => Ok(Label::W),
            "MSE" => Ok(Label::Mse),
            "MSEc" => Ok(Label::MseCandidate),
            "ED" => Ok(Label::Drowsy),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// Per-sample scoring aligned to a [`Recording`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTrack {
    pub labels: Vec<Label>,
}

impl LabelTrack {
    pub fn new(labels: Vec<Label>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A named signal in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub samples: Vec<f64>,
}

/// Multi-channel recording sampled at a single rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub rate_hz: f64,
    channels: Vec<Channel>,
}

impl Recording {
    pub fn new(id: impl Into<String>, rate_hz: f64, channels: Vec<Channel>) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling rate {rate_hz}")));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::DuplicateChannel(ch.name.clone()));
            }
        }
        if let Some(first) = channels.first() {
            for ch in &channels[1..] {
                if ch.samples.len() != first.samples.len() {
                    return Err(Error::LengthMismatch(first.samples.len(), ch.samples.len()));
                }
            }
        }
        Ok(Self { id: id.into(), rate_hz, channels })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Channel> {
        self.channels
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.samples.as_slice())
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn duration_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    /// Restricts the recording to `names`, in the requested order.
    pub fn select_channels<S: AsRef<str>>(&self, names: &[S]) -> Result<Recording> {
        let channels = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.channel(n).map(|s| Channel { name: n.to_string(), samples: s.to_vec() })
            })
            .collect::<Result<Vec<_>>>()?;
        Recording::new(self.id.clone(), self.rate_hz, channels)
    }

    /// Applies `f` to every channel, keeping names and rate.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Recording>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let channels = self
            .channels
            .iter()
            .map(|c| Ok(Channel { name: c.name.clone(), samples: f(&c.samples)? }))
            .collect::<Result<Vec<_>>>()?;
        Recording::new(self.id.clone(), self.rate_hz, channels)
    }
}
