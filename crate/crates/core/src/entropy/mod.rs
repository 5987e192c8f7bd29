//! Factorized per-channel logistic entropy model, frequency tables, a
//! bit-exact range coder and the rate / rate-distortion estimates built on them.

mod coder;
mod fit;
mod model;
mod table;

pub use coder::{
    decode_escaped, encode_escaped, range_decode, range_encode, Bitstream, RangeDecoder, RangeEncoder,
};
pub use fit::{fit_entropy_model, FitConfig, FitReport, QSampler};
pub use model::{
    entropy_model_sample, rate_bits, rd_loss, symbol_prob, ChannelEntropyModel, ChannelPmf, QuantizedModel,
    SymbolModel, DEFAULT_Q_MAX, DEFAULT_Q_MIN, MODEL_MAGIC, MODEL_VERSION, TAIL_MASS,
};
pub use table::{FrequencyTable, MAX_ALPHABET, PRECISION_BITS, TOTAL_FREQ};
