//! Handwriting text recognition toolkit: a convolutional-recurrent
//! recognizer trained with CTC, built on a small from-scratch reverse-mode
//! autodiff engine so the whole pipeline is self-contained and verifiable
//! at desk scale.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`] — dense tensors and the recording [`tensor::Graph`] with the
//!   exact operator set the recognizer needs.
//! - [`ctc`] — CTC loss (log-domain forward/backward dynamic program with an
//!   analytic gradient), a brute-force enumeration oracle, and greedy
//!   decoding.
//! - [`preprocess`] — fixed-canvas placement with median padding, affine +
//!   noise augmentation, transcript space-padding, batch assembly.
//! - [`dataset`] — JSONL manifests, binary PGM decoding, the alphabet, and a
//!   deterministic synthetic line generator.
//! - [`network`] — the recognizer: ResNet-style backbone, column-wise
//!   flattening (max-pool or concatenation), BiLSTM head, and the train-only
//!   1-D convolutional shortcut branch.
//! - [`metrics`] — edit distance and corpus CER/WER.
//! - [`train`] — Adam, the multistep schedule, the multi-task loss,
//!   checkpoints, metric logs, the training/evaluation drivers, and the
//!   ablation grid.
//! - [`gradcheck`] — the finite-difference suite backing the `gradcheck`
//!   CLI subcommand.
//!
//! Numeric core types are generic over the scalar (`f32` for training,
//! `f64` for oracles); the aliases below pin the common choices.

pub mod ctc;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Execution mode of stochastic layers: dropout and batch-norm statistics
/// switch on it, and augmentation only runs in train mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
