//! Minimal reverse-mode differentiable tensor layer.
//!
//! Exactly the op vocabulary the codec and masknet need, plus a
//! finite-difference gradient checker. Everything runs in f64.

pub(crate) mod kernels;

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use ops::{forward_op, multihead_attention, MhaParams, OpKind};
pub use tape::{chunk_count, BackwardStats, NodeId, Tape};
pub use tensor::{ParamRegistry, Tensor};
