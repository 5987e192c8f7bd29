//! Dense tensors, the q-conditioned denoiser network, AdamW, seeded random
//! streams and the `RDMC` checkpoint format.

mod checkpoint;
mod denoiser;
mod optim;
mod rng;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use denoiser::{q_embed, Dense, DenoiserConfig, DenoiserGrads, DenoiserParams};
pub use optim::{AdamW, AdamWConfig, ParamSet};
pub use rng::{streams, SeededRng};
pub use tensor::LatentTensor;
