//! Dense per-sample segmentation of Maintenance-of-Wakefulness-Test recordings.
//!
//! Every sample of a recording is labelled as wakefulness (`W`), microsleep
//! episode (`MSE`), microsleep episode candidate (`MSEc`) or drowsiness (`ED`)
//! by a sliding-window 1D CNN, or at 0.25 s resolution by a CNN-LSTM hybrid.
//!
//! The pipeline is split into:
//!
//! * [`ingest`]: EDF recordings and interval label files.
//! * [`conditioning`]: Fourier band-pass and input normalizations.
//! * [`dataset`]: patient splits, windows, class weights, batch sampling.
//! * [`nn`]: the layer engine (forward, backward, Nadam, checkpoints).
//! * [`architectures`]: the CNN window ladder and the CNN-LSTM.
//! * [`trainer`]: training loops and history.
//! * [`segmentation`]: naive and shared-computation dense inference.
//! * [`evaluation`]: per-class Cohen's kappa on concatenated recordings.
//! * [`embedding`]: hidden features and exact t-SNE.
//! * [`synthgen`]: synthetic recordings for end-to-end tests.

pub mod architectures;
pub mod conditioning;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod nn;
pub mod segmentation;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use ingest::{Label, LabelTrack, Recording};

/// Sampling rate every stage of the pipeline assumes.
pub const SAMPLE_RATE_HZ: f64 = 200.0;

/// Scoring channels: two occipital EEG derivations and two EOG channels.
pub const O1M2: &str = "O1M2";
pub const O2M1: &str = "O2M1";
pub const E1M1: &str = "E1M1";
pub const E2M1: &str = "E2M1";
