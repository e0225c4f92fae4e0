//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward evaluation; [`Tape::backward`] walks it in
//! reverse. Only the operations the sequence network needs are provided, and
//! nothing broadcasts except multiplication by a scalar constant.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_params};
pub use params::{AdamConfig, Param, ParamId, ParamStore};
pub use tape::{Gradients, NeighborMean, Tape, Var};
pub use tensor::Tensor;
