use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("symbol {symbol} outside alphabet [{lo}, {hi}]")]
    SymbolRange { symbol: i64, lo: i32, hi: i32 },

    #[error("scale q = {q} outside supported range [{q_min}, {q_max}]")]
    UnsupportedRate { q: f64, q_min: f64, q_max: f64 },

    #[error("entropy model: {0}")]
    Model(String),

    #[error("corrupt bitstream at symbol {position}: {reason}")]
    Decode { position: usize, reason: String },

    #[error("file format: {0}")]
    Format(String),

    #[error("no atom within the corruption window around {0:?}")]
    EmptySupport(Vec<f64>),

    #[error("posterior mass underflow in corruption window")]
    Underflow,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
