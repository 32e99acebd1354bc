//! Numerical substrate: dense matrices, the denoiser network, Adam and
//! parameter checkpoints.

mod adam;
pub mod checkpoint;
mod denoiser;
mod matrix;

pub use adam::{adam_update, AdamState, ParamTensors};
pub use denoiser::{
    denoiser_backward, denoiser_forward, linear_forward, silu, sinusoidal_embed, DenoiserParams,
    EmbedTime, ForwardTrace, Linear,
};
pub use matrix::{Mask, Matrix};
