use std::fmt;
use std::str::FromStr;

use crate::entropy::{entropy_model_sample, ChannelEntropyModel};
use crate::numerics::{streams, DenoiserParams, LatentTensor, SeededRng};
use crate::quantizer::{quantize_scaled, simulate_quantize, QuantScale};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 2;
pub const DEFAULT_BETA: f64 = 0.075;

/// Distribution of the injected noise `ε`; every form has unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseForm {
    Gaussian,
    Uniform,
    EntropyModel,
    None,
}

impl NoiseForm {
    pub const ALL: [NoiseForm; 4] = [NoiseForm::Gaussian, NoiseForm::Uniform, NoiseForm::EntropyModel, NoiseForm::None];

    pub fn name(self) -> &'static str {
        match self {
            NoiseForm::Gaussian => "gaussian",
            NoiseForm::Uniform => "uniform",
            NoiseForm::EntropyModel => "entropy",
            NoiseForm::None => "none",
        }
    }
}

impl fmt::Display for NoiseForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseForm::Gaussian),
            "uniform" => Ok(NoiseForm::Uniform),
            "entropy" | "entropy_model" => Ok(NoiseForm::EntropyModel),
            "none" => Ok(NoiseForm::None),
            other => Err(Error::input(format!("unknown noise form '{other}' (gaussian, uniform, entropy, none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub q0: QuantScale,
    pub steps: usize,
    pub beta: f64,
    pub noise: NoiseForm,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(q0: QuantScale, steps: usize, beta: f64, noise: NoiseForm, seed: u64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::input(format!("beta must be finite and non-negative, got {beta}")));
        }
        Ok(Self { q0, steps, beta, noise, seed })
    }

    /// Two steps, `β = 0.075`, Gaussian noise.
    pub fn with_defaults(q0: QuantScale) -> Self {
        Self { q0, steps: DEFAULT_STEPS, beta: DEFAULT_BETA, noise: NoiseForm::Gaussian, seed: 0 }
    }

    pub fn is_deterministic(&self) -> bool {
        self.beta == 0.0 || self.noise == NoiseForm::None
    }
}

/// Strictly decreasing scales `q_0 > … > q_N >= 0`; a single entry means no
/// reverse steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    scales: Vec<f64>,
}

impl Schedule {
    pub fn from_scales(scales: Vec<f64>) -> Result<Self> {
        let Some(&last) = scales.last() else {
            return Err(Error::input("schedule needs at least one scale"));
        };
        if !(last >= 0.0) || scales.iter().any(|q| !q.is_finite()) {
            return Err(Error::input("schedule scales must be finite and non-negative"));
        }
        if scales[0] <= 0.0 {
            return Err(Error::input("schedule must start at a positive scale"));
        }
        if scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::input(format!("schedule {scales:?} is not strictly decreasing")));
        }
        Ok(Self { scales })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn steps(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn is_passthrough(&self) -> bool {
        self.steps() == 0
    }
}

/// Linear `q_i = q_0·(N − i)/N`.
pub fn make_schedule(q0: QuantScale, steps: usize) -> Schedule {
    let q0 = q0.get();
    let scales = if steps == 0 {
        vec![q0]
    } else {
        (0..=steps).map(|i| q0 * (steps - i) as f64 / steps as f64).collect()
    };
    Schedule { scales }
}

/// Compression as the forward process: lattice quantization where the model
/// supports `q`, additive uniform noise elsewhere.
pub fn forward_compress(
    y0: &LatentTensor,
    q: QuantScale,
    model: &ChannelEntropyModel,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    if model.supports(q.get()) {
        quantize_scaled(y0, q)
    } else {
        simulate_quantize(y0, q.get(), rng)
    }
}

/// `(x̂_0 − x_t) / q`.
pub fn score(x_hat0: &LatentTensor, x_t: &LatentTensor, q: f64) -> Result<LatentTensor> {
    if !(q > 0.0) {
        return Err(Error::input(format!("score needs q > 0, got {q}")));
    }
    x_hat0.zip_map(x_t, |a, b| (a - b) / q)
}

fn check_step(q_i: f64, q_next: f64) -> Result<()> {
    if !(q_i > 0.0) || !(q_next >= 0.0) || q_next >= q_i {
        return Err(Error::input(format!("Euler step needs q_i > q_next >= 0, got {q_i} -> {q_next}")));
    }
    Ok(())
}

/// Interpolation form `y + ((q_i − q_next)/q_i)·(x̂_0 − y)`; a step to zero
/// returns `x̂_0` exactly.
pub fn euler_step(y: &LatentTensor, x_hat0: &LatentTensor, q_i: f64, q_next: f64) -> Result<LatentTensor> {
    check_step(q_i, q_next)?;
    if q_next == 0.0 {
        y.ensure_same_shape(x_hat0)?;
        return Ok(x_hat0.clone());
    }
    let frac = (q_i - q_next) / q_i;
    y.zip_map(x_hat0, |v, x| v + frac * (x - v))
}

/// Score form `y + (q_i − q_next)·d`.
pub fn euler_step_score(y: &LatentTensor, d: &LatentTensor, q_i: f64, q_next: f64) -> Result<LatentTensor> {
    check_step(q_i, q_next)?;
    let h = q_i - q_next;
    y.zip_map(d, |v, g| v + h * g)
}

/// `α = β·√max(q − q_min, 0)`.
pub fn injection_scale(beta: f64, q: f64, q_min: f64) -> f64 {
    beta * (q - q_min).max(0.0).sqrt()
}

/// Unit-variance noise of the requested form with the shape of `like`.
pub fn sample_noise(
    form: NoiseForm,
    like: &LatentTensor,
    q: f64,
    model: &ChannelEntropyModel,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    let n = like.len();
    let data = match form {
        NoiseForm::Gaussian => (0..n).map(|_| rng.standard_normal()).collect(),
        NoiseForm::Uniform => {
            let norm = 12f64.sqrt();
            (0..n).map(|_| rng.uniform_centered() * norm).collect()
        }
        NoiseForm::EntropyModel => {
            return entropy_model_sample(model, QuantScale::new(q)?, like.shape(), rng);
        }
        NoiseForm::None => vec![0.0; n],
    };
    LatentTensor::new(like.shape().to_vec(), data)
}

/// `y + α·(ε − d)` with `α` evaluated at `q_next`. Nothing is drawn when
/// `α = 0` or the form is `None`.
pub fn inject_randomness(
    y: &LatentTensor,
    d: &LatentTensor,
    q_next: f64,
    beta: f64,
    form: NoiseForm,
    model: &ChannelEntropyModel,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    if !(beta >= 0.0) {
        return Err(Error::input(format!("beta must be non-negative, got {beta}")));
    }
    y.ensure_same_shape(d)?;
    let alpha = injection_scale(beta, q_next, model.q_min());
    if alpha == 0.0 || form == NoiseForm::None {
        return Ok(y.clone());
    }
    let eps = sample_noise(form, y, q_next, model, rng)?;
    let mut out = y.clone().into_data();
    for ((o, e), g) in out.iter_mut().zip(eps.data()).zip(d.data()) {
        *o += alpha * (e - g);
    }
    LatentTensor::new(y.shape().to_vec(), out)
}

/// Posterior-mean estimate `D(x, q)` of the clean latent.
pub trait Denoiser {
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor>;
}

impl Denoiser for DenoiserParams {
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        self.forward(x, q)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        (**self).denoise(x, q)
    }
}

/// Always predicts the same tensor.
#[derive(Debug, Clone)]
pub struct ConstantDenoiser(pub LatentTensor);

impl Denoiser for ConstantDenoiser {
    fn denoise(&self, x: &LatentTensor, _q: f64) -> Result<LatentTensor> {
        x.ensure_same_shape(&self.0)?;
        Ok(self.0.clone())
    }
}

/// Adapts a closure.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&LatentTensor, f64) -> Result<LatentTensor>,
{
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        (self.0)(x, q)
    }
}

/// Every intermediate state `ȳ_0, …, ȳ_N` of the reverse process.
pub fn reverse_trace(
    y: &LatentTensor,
    config: &SamplerConfig,
    denoiser: &dyn Denoiser,
    model: &ChannelEntropyModel,
) -> Result<Vec<LatentTensor>> {
    let schedule = make_schedule(config.q0, config.steps);
    let mut rng = SeededRng::new(config.seed, streams::NOISE);
    let mut states = Vec::with_capacity(schedule.scales().len());
    states.push(y.clone());
    for w in schedule.scales().windows(2) {
        let (q_i, q_next) = (w[0], w[1]);
        let current = states.last().expect("non-empty");
        let x_hat0 = denoiser.denoise(current, q_i)?;
        let d = score(&x_hat0, current, q_i)?;
        let stepped = euler_step(current, &x_hat0, q_i, q_next)?;
        let next = inject_randomness(&stepped, &d, q_next, config.beta, config.noise, model, &mut rng)?;
        states.push(next);
    }
    Ok(states)
}

/// Run the reverse process from the decoded latent at `q_0` and return `ȳ_N`.
pub fn reverse_sample(
    y: &LatentTensor,
    config: &SamplerConfig,
    denoiser: &dyn Denoiser,
    model: &ChannelEntropyModel,
) -> Result<LatentTensor> {
    Ok(reverse_trace(y, config, denoiser, model)?.pop().expect("initial state"))
}
