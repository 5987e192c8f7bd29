use super::model::{logistic_mass, sigmoid, ChannelEntropyModel, DEFAULT_Q_MAX, DEFAULT_Q_MIN, SCALE_FLOOR};
use crate::numerics::{streams, AdamW, AdamWConfig, LatentTensor, ParamSet, SeededRng};
use crate::{Error, Result};

/// Distribution of training scales over `[q_min, q_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QSampler {
    Uniform,
    LogUniform,
    Fixed(f64),
}

impl QSampler {
    pub fn sample(&self, rng: &mut SeededRng, q_min: f64, q_max: f64) -> f64 {
        match *self {
            QSampler::Uniform => rng.uniform_in(q_min, q_max),
            QSampler::LogUniform => rng.uniform_in(q_min.ln(), q_max.ln()).exp(),
            QSampler::Fixed(q) => q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_rows: usize,
    pub lr: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub sampler: QSampler,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_rows: 4096,
            lr: 1e-2,
            q_min: DEFAULT_Q_MIN,
            q_max: DEFAULT_Q_MAX,
            sampler: QSampler::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: ChannelEntropyModel,
    /// Mean bits per element on a fixed evaluation grid of scales, one per epoch.
    pub epoch_losses: Vec<f64>,
    /// Channels whose data was constant; their scale sits at the floor.
    pub frozen: Vec<usize>,
}

struct Params {
    loc: Vec<f64>,
    log_scale: Vec<f64>,
}

impl ParamSet for Params {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.loc, &self.log_scale]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.loc, &mut self.log_scale]
    }
}

fn dsigmoid(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// `-ln P(bin)` and its gradient with respect to `(loc, log_scale)`.
fn nll_and_grad(v: f64, q: f64, loc: f64, scale: f64) -> (f64, f64, f64) {
    let k = (v / q).round();
    let a = (k - 0.5) * q;
    let b = (k + 0.5) * q;
    let p = logistic_mass(a, b, loc, scale).max(1e-300);
    let za = (a - loc) / scale;
    let zb = (b - loc) / scale;
    let (da, db) = (dsigmoid(za), dsigmoid(zb));
    let dp_dloc = -(db - da) / scale;
    let dp_dlog = -(db * zb - da * za);
    (-p.ln(), -dp_dloc / p, -dp_dlog / p)
}

/// Fit per-channel logistic parameters by minimizing the expected code length
/// of `round(y/q)` over sampled `q`. The channel is the last dimension.
pub fn fit_entropy_model(data: &[LatentTensor], config: &FitConfig) -> Result<FitReport> {
    let first = data.first().ok_or_else(|| Error::input("no training data"))?;
    let channels = first.channels();
    if data.iter().any(|t| t.channels() != channels) {
        return Err(Error::input("training tensors disagree on channel count"));
    }
    if config.epochs == 0 || config.batch_rows == 0 {
        return Err(Error::input("epochs and batch size must be positive"));
    }
    if !(config.lr > 0.0) {
        return Err(Error::input("learning rate must be positive"));
    }
    let rows: Vec<&[f64]> = data.iter().flat_map(|t| (0..t.rows()).map(move |i| t.row(i))).collect();
    if rows.is_empty() {
        return Err(Error::input("no training data"));
    }
    let n = rows.len() as f64;

    let mut params = Params { loc: vec![0.0; channels], log_scale: vec![0.0; channels] };
    let mut frozen = Vec::new();
    for c in 0..channels {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let s = var.sqrt() * 3f64.sqrt() / std::f64::consts::PI;
        params.loc[c] = mean;
        if s <= SCALE_FLOOR {
            log::warn!("channel {c} is constant; flooring its scale at {SCALE_FLOOR}");
            frozen.push(c);
            params.log_scale[c] = SCALE_FLOOR.ln();
        } else {
            params.log_scale[c] = s.ln();
        }
    }

    let eval_qs: Vec<f64> =
        (0..8).map(|i| config.q_min * (config.q_max / config.q_min).powf(i as f64 / 7.0)).collect();
    let eval_rows: Vec<&[f64]> = rows.iter().step_by(rows.len().div_ceil(4096)).copied().collect();
    let eval = |p: &Params| -> f64 {
        let mut total = 0.0;
        for &q in &eval_qs {
            for r in &eval_rows {
                for c in 0..channels {
                    total += nll_and_grad(r[c], q, p.loc[c], p.log_scale[c].exp()).0;
                }
            }
        }
        total / (eval_qs.len() * eval_rows.len() * channels) as f64 / std::f64::consts::LN_2
    };

    let mut opt = AdamW::new(AdamWConfig { lr: config.lr, weight_decay: 0.0, ..AdamWConfig::default() }, &params);
    let mut row_rng = SeededRng::new(config.seed, streams::DATA);
    let mut q_rng = SeededRng::new(config.seed, streams::Q_SAMPLING);
    let batch = config.batch_rows.min(rows.len());
    let steps_per_epoch = rows.len().div_ceil(batch).max(16);
    let total_steps = config.epochs * steps_per_epoch;
    let mut losses = Vec::with_capacity(config.epochs);
    let mut grads = Params { loc: vec![0.0; channels], log_scale: vec![0.0; channels] };
    for epoch in 0..config.epochs {
        for step in 0..steps_per_epoch {
            let progress = (epoch * steps_per_epoch + step) as f64 / total_steps as f64;
            opt.set_lr(config.lr * (1.0 - 0.9 * progress));
            grads.loc.fill(0.0);
            grads.log_scale.fill(0.0);
            for _ in 0..batch {
                let r = rows[row_rng.below(rows.len())];
                let q = config.sampler.sample(&mut q_rng, config.q_min, config.q_max);
                for c in 0..channels {
                    let (_, gl, gs) = nll_and_grad(r[c], q, params.loc[c], params.log_scale[c].exp());
                    grads.loc[c] += gl / batch as f64;
                    grads.log_scale[c] += gs / batch as f64;
                }
            }
            for &c in &frozen {
                grads.loc[c] = 0.0;
                grads.log_scale[c] = 0.0;
            }
            opt.step(&mut params, &grads)?;
            for s in &mut params.log_scale {
                *s = s.max(SCALE_FLOOR.ln());
            }
        }
        let loss = eval(&params);
        log::info!("entropy fit epoch {}: {loss:.5} bits/element", epoch + 1);
        losses.push(loss);
    }
    let model = ChannelEntropyModel::new(params.loc, params.log_scale, config.q_min, config.q_max)?;
    Ok(FitReport { model, epoch_losses: losses, frozen })
}
