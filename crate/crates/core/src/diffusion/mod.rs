//! Compression as a forward process and its learned reversal.
//!
//! Quantizing at scale `q` plays the role of noising at time `q`. The decoder
//! walks a decreasing schedule `q_0 > … > q_N = 0`, at each step asking the
//! denoiser for `x̂_0`, forming the direction `d = (x̂_0 − ȳ)/q`, taking an
//! Euler step and optionally adding `α(ε − d)` with `α = β√(q − q_min)`.

mod sampler;
mod train;

pub use sampler::{
    euler_step, euler_step_score, forward_compress, inject_randomness, injection_scale, make_schedule,
    reverse_sample, reverse_trace, sample_noise, score, ConstantDenoiser, Denoiser, FnDenoiser, NoiseForm,
    SamplerConfig, Schedule, DEFAULT_BETA, DEFAULT_STEPS,
};
pub use train::{Corruption, DenoiserTrainer, TrainConfig};
