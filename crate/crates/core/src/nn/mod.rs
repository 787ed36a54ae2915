//! Layer engine for the fixed vocabulary the segmenters use: convolution,
//! batch norm, ReLU, max pooling, flatten, dropout, dense, softmax, LSTM and
//! Gaussian noise, with reverse-mode gradients, Nadam and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod init;
mod layers;
mod loss;
mod lstm;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{load_params, save_params};
pub use init::glorot_normal_init;
pub use layers::{dropout, gaussian_noise, softmax_rows, Layer, LayerSpec, Mode, Padding, Param};
pub use loss::weighted_cross_entropy;
pub use lstm::{lstm_forward, lstm_sequence, LstmTrace};
pub use network::{Family, Network, NetworkSpec};
pub use optim::{clip_grad_norm, NadamConfig, OptimizerState};
pub use tensor::{Scalar, Tensor};

