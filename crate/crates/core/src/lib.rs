//! Tabular missing-data imputation by expectation-maximization over a
//! score-based diffusion model.
//!
//! The M-step fits a variance-exploding diffusion model to the current
//! complete-data estimate by denoising score matching; the E-step re-imputes
//! the missing entries by conditional inpainting with the fitted model and
//! averages several draws. Columns are mapped to a continuous space first
//! (analog bits for categoricals, per-dimension standardization).
//!
//! Module map:
//! - [`ndcore`]: dense matrices, the denoiser MLP with hand-written
//!   backpropagation, Adam, parameter checkpoints.
//! - [`diffusion`]: noise schedule, perturbation, score-matching loss,
//!   timestep ladder, Euler–Maruyama reverse step, unconditional sampling.
//! - [`emloop`]: M-step training, inpainting E-step, the EM loop and
//!   out-of-sample imputation.
//! - [`tabular`]: typed datasets, analog bits, encode/decode, CSV I/O.
//! - [`missingness`]: MCAR / MAR / MNAR mask generation.
//! - [`evalkit`]: metrics, train/test split, synthetic benchmarks with
//!   analytic oracles.
//! - [`cli`]: experiment orchestration behind the `tabimpute` binary.

pub mod cli;
pub mod diffusion;
pub mod emloop;
mod error;
pub mod evalkit;
pub mod missingness;
pub mod ndcore;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
