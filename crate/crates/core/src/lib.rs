//! Learning and synthesis of mesh animation sequences.
//!
//! Frames of a consistently meshed animation are encoded as per-vertex
//! deformation features ([`codec`]), a generator made of mesh convolutions and
//! a stacked LSTM is trained over them with two weight-shared chains running
//! in opposite directions ([`net`], [`train`]), and the trained model drives
//! conditional generation and keyframe completion ([`apps`]).

pub mod apps;
pub mod autodiff;
pub mod codec;
pub mod error;
pub mod mesh;
pub mod net;
pub mod train;

pub use error::{Error, Result};
