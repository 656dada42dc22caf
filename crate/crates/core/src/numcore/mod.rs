//! Minimal reverse-mode autodiff engine with exactly the operations the 1-D
//! masked autoencoder needs, plus AdamW and the cosine learning-rate schedule.
//!
//! All arithmetic is IEEE-754 binary64. Every operation checks its output for
//! NaN/Inf and fails hard on non-finite values. A [`Graph`] lives for one
//! training step: build the forward pass, call [`Graph::backward`], harvest
//! gradients, drop the graph.

mod check;
mod graph;
mod nn;
mod optim;
mod tensor;

pub use check::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use nn::{linear, multi_head_attention, AttentionNodes};
pub use optim::{adamw_step, adamw_update_param, cosine_lr, AdamWState, BiasCorrection, LrSchedule};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor and graph operations.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument in {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, NumError>;
