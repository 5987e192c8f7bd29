use super::image::ImageTensor;
use super::transform::analysis_transform;
use crate::diffusion::{Corruption, DenoiserTrainer, TrainConfig};
use crate::entropy::{fit_entropy_model, ChannelEntropyModel, FitConfig, FitReport};
use crate::numerics::LatentTensor;
use crate::{Error, Result};

/// Block-DCT rows of every image, stacked into `[blocks, 64]`.
pub fn corpus_latents(images: &[ImageTensor]) -> Result<LatentTensor> {
    if images.is_empty() {
        return Err(Error::input("empty image corpus"));
    }
    let latents = images.iter().map(analysis_transform).collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = latents.iter().flat_map(|l| (0..l.rows()).map(move |i| l.row(i))).collect();
    LatentTensor::stack_rows(&rows)
}

pub fn train_entropy(images: &[ImageTensor], config: &FitConfig) -> Result<FitReport> {
    fit_entropy_model(&[corpus_latents(images)?], config)
}

/// Training recipe for block denoisers: scales drawn from `[q_min/5, q_max]`
/// so the simulated branch below `q_min` is also seen. Half the rows are
/// corrupted off-lattice because reverse-process states are never on it.
pub fn image_train_config(steps: u64, model: &ChannelEntropyModel, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(steps, model.q_min() / 5.0, model.q_max());
    cfg.batch = 64;
    cfg.optimizer.lr = 1e-3;
    cfg.final_lr_ratio = 0.05;
    cfg.corruption = Corruption::Mixed(0.5);
    cfg.seed = seed;
    cfg
}

/// Step `trainer` until its configured step count, returning the mean loss
/// of each window of `log_every` steps.
pub fn run_denoiser_training(
    trainer: &mut DenoiserTrainer,
    data: &LatentTensor,
    model: Option<&ChannelEntropyModel>,
    log_every: u64,
) -> Result<Vec<(u64, f64)>> {
    let log_every = log_every.max(1);
    let mut log = Vec::new();
    let mut window = 0.0;
    let mut count = 0u64;
    while !trainer.is_done() {
        let batch = trainer.sample_rows(data)?;
        window += trainer.train_step(&batch, model)?;
        count += 1;
        let step = trainer.step_count();
        if step % log_every == 0 || trainer.is_done() {
            let mean = window / count as f64;
            log::info!("denoiser step {step}: loss {mean:.6}");
            log.push((step, mean));
            window = 0.0;
            count = 0;
        }
    }
    Ok(log)
}
