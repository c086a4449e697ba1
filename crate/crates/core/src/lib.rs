//! Hybrid transformer-encoder / peephole-LSTM forecaster for load series,
//! with a particle swarm hyperparameter tuner and the preprocessing,
//! training and evaluation machinery around it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod pso;
pub mod tensor;
pub mod train;
pub mod transformer;
pub mod tune;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
