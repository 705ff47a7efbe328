//! Deep model-based reconstruction for linear imaging inverse problems.
//!
//! The crate covers the measurement operators (masked-Fourier MRI and
//! blur-plus-decimation super-resolution), a residual CNN image prior, the
//! SD-RED and PnP-PGM fixed-point reconstructions, AWGN denoiser training and
//! deep-equilibrium training of the prior through implicit differentiation,
//! and an experiment harness that compares the two kinds of prior under
//! matched and mismatched measurement models.

pub mod deq_training;
pub mod denoiser_training;
pub mod error;
pub mod forward_models;
pub mod harness;
pub mod numerics;
pub mod priors;
pub mod solvers;

pub use error::{DmbaError, Result};
