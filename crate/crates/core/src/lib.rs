//! Rate-variable quantization treated as a forward diffusion process.
//!
//! Latents are corrupted by scaled quantization (`quantizer`), coded losslessly
//! with a factorized logistic entropy model and a range coder (`entropy`), and
//! restored at the decoder by a q-conditioned denoiser driven through an Euler
//! ODE/SDE sampler (`diffusion`). `oracle` provides exact posterior-mean
//! denoisers and distribution distances for verification, and `pipeline` wires
//! everything into an image codec with file formats and evaluation drivers.

pub mod diffusion;
pub mod entropy;
mod error;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod quantizer;

pub use error::{Error, Result};
