//! EEG-Deformer: a hierarchical coarse-to-fine transformer for EEG decoding,
//! built on a self-contained reverse-mode autodiff tensor engine.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`]: dense tensors with reverse-mode automatic differentiation,
//!   the convolution/attention/normalization ops the model needs, and a
//!   finite-difference gradient checker;
//! - [`model`]: the EEG-Deformer itself — shallow CNN encoder, stacked
//!   hierarchical coarse-to-fine transformer (HCT) blocks with a fine-grained
//!   temporal-learning branch, dense information purification, and the
//!   classification head — plus shape/parameter/MACs audits;
//! - [`data`]: synthetic EEG generation, reaction-time fatigue labeling,
//!   trial segmentation, leave-one-subject-out splits, and a binary dataset
//!   format;
//! - [`train`]: Adam with cosine annealing, batched training with
//!   best-validation checkpointing, LOSO evaluation, and metrics;
//! - [`saliency`]: input-gradient attribution maps and their export;
//! - [`cli`]: the `deformer` command-line interface.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
