use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Stream ids for the independent random purposes of the toolkit. Per-task
/// streams are derived with [`SeededRng::substream`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const Q_SAMPLING: u64 = 3;
    pub const CORRUPTION: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const PROJECTIONS: u64 = 6;
    pub const EVAL: u64 = 7;
}

/// Counter-based random stream: ChaCha12 keyed by the seed, with the stream
/// id selecting the nonce and the word position acting as the counter.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Rebuild a stream positioned at a given counter (in 32-bit words).
    pub fn at_counter(seed: u64, stream: u64, counter: u128) -> Self {
        let mut rng = Self::new(seed, stream);
        rng.inner.set_word_pos(counter);
        rng
    }

    /// Independent stream for task `index` under the same purpose.
    pub fn substream(&self, index: u32) -> Self {
        Self::new(self.seed, (self.stream << 32) | u64::from(index) | (1 << 63))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[-0.5, 0.5)`.
    pub fn uniform_centered(&mut self) -> f64 {
        self.uniform() - 0.5
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
