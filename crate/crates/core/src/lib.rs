//! Video anomaly detection by masked-frame inpainting.
//!
//! A ConvLSTM encodes the context frames, a meta-network turns the encoded
//! context into convolution filters (dynamic-filter attention), and a CNN
//! decoder inpaints a grid-masked copy of the target frame, predicting a
//! categorical distribution over intensity bins for every pixel. The negative
//! log-likelihood of the observed frame is the anomaly score.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: dense tensors and reverse-mode differentiation.
//! - [`masking`]: shifted grid masks.
//! - [`model`]: the network, its parameters and checkpoints.
//! - [`loss`]: per-pixel NLL, loss maps and anomaly scores.
//! - [`data`]: Moving-MNIST style sequences, corruptions and file formats.
//! - [`train`]: Adam training on anomaly-free sequences.
//! - [`eval`]: dataset scoring, equal error rate and loss-map export.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod frame;
pub mod loss;
pub mod masking;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use frame::{Frame, Sequence};
