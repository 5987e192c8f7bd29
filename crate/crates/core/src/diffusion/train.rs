use ndarray::ArrayView2;

use crate::entropy::ChannelEntropyModel;
use crate::numerics::{streams, AdamW, AdamWConfig, Checkpoint, DenoiserParams, LatentTensor, NamedTensor, ParamSet, SeededRng};
use crate::quantizer::simulate_quantize;
use crate::{Error, Result};

/// How training inputs are corrupted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    /// Lattice quantization where the entropy model supports `q`, simulated
    /// quantization elsewhere.
    Forward,
    /// Always additive uniform noise.
    Simulated,
    /// `Forward`, except that each in-range row is simulated with the given
    /// probability.
    Mixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    /// Learning rate at the last step as a fraction of the initial one (cosine decay).
    pub final_lr_ratio: f64,
    /// Training scales are drawn uniformly from `[q_lo, q_hi]`, one per row.
    pub q_lo: f64,
    pub q_hi: f64,
    pub corruption: Corruption,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: u64, q_lo: f64, q_hi: f64) -> Self {
        Self {
            steps,
            batch: 64,
            optimizer: AdamWConfig::default(),
            final_lr_ratio: 1.0,
            q_lo,
            q_hi,
            corruption: Corruption::Forward,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::input("batch size must be positive"));
        }
        if !(self.q_lo > 0.0 && self.q_lo <= self.q_hi && self.q_hi.is_finite()) {
            return Err(Error::input(format!("invalid training scale range [{}, {}]", self.q_lo, self.q_hi)));
        }
        if let Corruption::Mixed(p) = self.corruption {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input("mixed corruption probability must lie in [0, 1]"));
            }
        }
        if !(self.final_lr_ratio >= 0.0 && self.final_lr_ratio <= 1.0) {
            return Err(Error::input("final learning-rate ratio must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let base = self.optimizer.lr;
        if self.steps <= 1 {
            return base;
        }
        let t = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        base * (self.final_lr_ratio + (1.0 - self.final_lr_ratio) * cosine)
    }
}

/// Optimizer, step counter and random streams of one denoiser training run.
#[derive(Debug, Clone)]
pub struct DenoiserTrainer {
    params: DenoiserParams,
    opt: AdamW,
    config: TrainConfig,
    step: u64,
    data_rng: SeededRng,
    q_rng: SeededRng,
    corruption_rng: SeededRng,
}

fn counter_tensor(name: &str, rng: &SeededRng) -> NamedTensor {
    let c = rng.counter();
    let parts = (0..4).map(|i| ((c >> (32 * i)) & 0xFFFF_FFFF) as f64).collect();
    NamedTensor::new(name, vec![4], parts)
}

fn counter_from(ck: &Checkpoint, name: &str) -> Result<u128> {
    let t = ck.require(name)?;
    if t.data.len() != 4 || t.data.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > u32::MAX as f64) {
        return Err(Error::format(format!("malformed counter '{name}'")));
    }
    Ok(t.data.iter().enumerate().map(|(i, &v)| (v as u128) << (32 * i)).sum())
}

impl DenoiserTrainer {
    pub fn new(params: DenoiserParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(config.optimizer, &params);
        Ok(Self {
            params,
            opt,
            config,
            step: 0,
            data_rng: SeededRng::new(config.seed, streams::DATA),
            q_rng: SeededRng::new(config.seed, streams::Q_SAMPLING),
            corruption_rng: SeededRng::new(config.seed, streams::CORRUPTION),
        })
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn into_params(self) -> DenoiserParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Draw `batch` rows of `data` with replacement.
    pub fn sample_rows(&mut self, data: &LatentTensor) -> Result<LatentTensor> {
        if data.rows() == 0 {
            return Err(Error::input("no training rows"));
        }
        let rows: Vec<&[f64]> = (0..self.config.batch).map(|_| data.row(self.data_rng.below(data.rows()))).collect();
        LatentTensor::stack_rows(&rows)
    }

    /// Per-row `q ~ U[q_lo, q_hi]`, corruption of each row, and one optimizer
    /// step on `mean ‖y_0 − D(y_t, q)‖²`. Returns the loss before the update.
    pub fn train_step(&mut self, y0: &LatentTensor, model: Option<&ChannelEntropyModel>) -> Result<f64> {
        let d = self.params.data_dim();
        if y0.channels() != d {
            return Err(Error::Shape { expected: vec![d], got: vec![y0.channels()] });
        }
        let rows = y0.rows();
        let mut qs = Vec::with_capacity(rows);
        let mut noisy = Vec::with_capacity(y0.len());
        for i in 0..rows {
            let q = self.q_rng.uniform_in(self.config.q_lo, self.config.q_hi);
            let row = y0.row(i);
            let supported = model.is_some_and(|m| m.supports(q));
            let lattice = match self.config.corruption {
                Corruption::Forward => supported,
                Corruption::Simulated => false,
                Corruption::Mixed(p) => supported && self.corruption_rng.uniform() >= p,
            };
            if lattice {
                noisy.extend(row.iter().map(|&v| (v / q).round() * q));
            } else {
                let t = LatentTensor::from_vec(row.to_vec())?;
                noisy.extend(simulate_quantize(&t, q, &mut self.corruption_rng)?.into_data());
            }
            qs.push(q);
        }
        let x = ArrayView2::from_shape((rows, d), &noisy).expect("row-major batch");
        let target = ArrayView2::from_shape((rows, d), y0.data()).expect("row-major batch");
        let (loss, grads) = self.params.backward_batch(x, &qs, target)?;
        self.opt.set_lr(self.config.lr_at(self.step));
        self.opt.step(&mut self.params, &grads)?;
        self.step += 1;
        Ok(loss)
    }

    /// Parameters plus everything needed to resume bit-identically.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_checkpoint();
        ck.push(NamedTensor::scalar("train.step", self.step as f64));
        let (m, v) = self.opt.moments();
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            ck.push(NamedTensor::new(format!("opt.m{i}"), vec![a.len() as u64], a.clone()));
            ck.push(NamedTensor::new(format!("opt.v{i}"), vec![b.len() as u64], b.clone()));
        }
        ck.push(counter_tensor("rng.data", &self.data_rng));
        ck.push(counter_tensor("rng.q", &self.q_rng));
        ck.push(counter_tensor("rng.corruption", &self.corruption_rng));
        ck
    }

    /// Resume from [`DenoiserTrainer::to_checkpoint`] output under `config`.
    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::from_checkpoint(ck)?;
        let step_f = ck.scalar("train.step")?;
        if step_f < 0.0 || step_f.fract() != 0.0 {
            return Err(Error::format("malformed training step"));
        }
        let step = step_f as u64;
        let n = params.param_slices().len();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for i in 0..n {
            first.push(ck.require(&format!("opt.m{i}"))?.data.clone());
            second.push(ck.require(&format!("opt.v{i}"))?.data.clone());
        }
        let expected: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        if first.iter().map(Vec::len).ne(expected.iter().copied()) {
            return Err(Error::format("optimizer state does not match parameters"));
        }
        let opt = AdamW::from_parts(config.optimizer, step, first, second)?;
        let seed = config.seed;
        Ok(Self {
            params,
            opt,
            config,
            step,
            data_rng: SeededRng::at_counter(seed, streams::DATA, counter_from(ck, "rng.data")?),
            q_rng: SeededRng::at_counter(seed, streams::Q_SAMPLING, counter_from(ck, "rng.q")?),
            corruption_rng: SeededRng::at_counter(seed, streams::CORRUPTION, counter_from(ck, "rng.corruption")?),
        })
    }
}
