//! Image codec built on the quantize-and-reverse mechanism: an 8×8 block DCT
//! stands in for the analysis/synthesis transforms, the latent is coded with
//! the channel entropy model, and the decoder optionally runs the reverse
//! process before synthesis. Also hosts the training and evaluation drivers.

mod codec;
mod eval;
mod image;
mod train;
mod transform;

pub use codec::{
    decode_image, decode_latent, encode_image, BitstreamHeader, DecodeOptions, Encoded, BITSTREAM_MAGIC,
    BITSTREAM_VERSION, HEADER_LEN,
};
pub use eval::{
    eval_sampler, rd_svg, rd_sweep, write_rd_csv, write_sampler_csv, RdPoint, SamplerEval, SamplerEvalRow, Source,
    RD_CSV_HEADER, SAMPLER_CSV_HEADER,
};
pub use image::{
    decode_pgm, encode_pgm, generate_corpus, generate_texture, load_corpus, psnr, read_pgm, write_pgm, ImageTensor,
};
pub use train::{corpus_latents, image_train_config, run_denoiser_training, train_entropy};
pub use transform::{analysis_transform, blocks_across, synthesis_transform, BLOCK, COEFFS};
