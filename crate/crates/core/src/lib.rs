//! Importance-sampled estimators of Gaussian-smoothed derivatives for
//! black-box objectives, the optimizers that consume them, a small suite of
//! benchmark tasks and an ensemble harness.

pub mod error;
pub mod harness;
pub mod estimators;
pub mod kernels;
pub mod optimizers;
pub mod samplers;
pub mod tasks;
pub mod trace;

pub use error::{Error, Result};
