//! Inherently interpretable CNN classifiers.
//!
//! A backbone's feature map feeds either a black-box head (global average
//! pooling then fully connected layers) or a class-evidence head of 1×1
//! convolutions whose per-class maps are averaged into the logits, so the
//! maps that produce the prediction are also its explanation.
//!
//! The crate carries its own small reverse-mode autodiff engine, the
//! ElasticNet-regularised trainer, five post-hoc saliency baselines, the
//! explanation metrics, a synthetic lesion dataset generator and the on-disk
//! formats used by the `softcam` command-line tool.

pub mod error;
pub mod io;
mod kernels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod saliency;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{HeadKind, HeadPreset, ModelBundle, ModelConfig};
pub use tape::{Gradients, NodeId, ReluMode, Tape};
pub use tensor::Tensor;
