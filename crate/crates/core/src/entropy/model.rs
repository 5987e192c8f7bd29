use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::table::{FrequencyTable, MAX_ALPHABET};
use crate::numerics::{LatentTensor, SeededRng};
use crate::quantizer::{quantize_scaled, symbolize, Alphabet, QuantScale, SymbolTensor};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"RDME";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_Q_MIN: f64 = 0.05;
pub const DEFAULT_Q_MAX: f64 = 2.0;
/// Probability mass left outside the alphabet; folded into the edge symbols.
pub const TAIL_MASS: f64 = 1.0 / (1u64 << 20) as f64;
pub(crate) const SCALE_FLOOR: f64 = 1e-6;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `P(a < X <= b)` for `X ~ Logistic(loc, scale)`, computed on whichever
/// side of the location avoids cancellation.
pub(crate) fn logistic_mass(a: f64, b: f64, loc: f64, scale: f64) -> f64 {
    let za = (a - loc) / scale;
    let zb = (b - loc) / scale;
    if za >= 0.0 {
        sigmoid(-za) - sigmoid(-zb)
    } else {
        sigmoid(zb) - sigmoid(za)
    }
}

/// Discretized logistic over the folded alphabet of one channel at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPmf {
    pub alphabet: Alphabet,
    pub probs: Vec<f64>,
}

impl ChannelPmf {
    pub fn new(loc: f64, scale: f64, q: f64) -> Result<Self> {
        let t = TAIL_MASS / 2.0;
        let logit = (t / (1.0 - t)).ln();
        let clamp = |v: f64| v.clamp(f64::from(i32::MIN / 2), f64::from(i32::MAX / 2)) as i64;
        let mut lo = clamp(((loc + scale * logit) / q + 0.5).floor());
        let mut hi = clamp(((loc - scale * logit) / q - 0.5).ceil());
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if (hi - lo + 1) as usize > MAX_ALPHABET {
            let center = clamp((loc / q).round());
            let half = MAX_ALPHABET as i64 / 2;
            lo = center - half + 1;
            hi = center + half;
        }
        let alphabet = Alphabet::new(lo as i32, hi as i32)?;
        let probs = if lo == hi {
            vec![1.0]
        } else {
            (lo..=hi)
                .map(|k| {
                    let a = if k == lo { f64::NEG_INFINITY } else { (k as f64 - 0.5) * q };
                    let b = if k == hi { f64::INFINITY } else { (k as f64 + 0.5) * q };
                    logistic_mass(a, b, loc, scale)
                })
                .collect()
        };
        Ok(Self { alphabet, probs })
    }

    pub fn prob(&self, k: i32) -> Result<f64> {
        if !self.alphabet.contains(i64::from(k)) {
            return Err(Error::SymbolRange { symbol: i64::from(k), lo: self.alphabet.lo, hi: self.alphabet.hi });
        }
        Ok(self.probs[(k - self.alphabet.lo) as usize])
    }

    /// Probability of `k` with out-of-alphabet symbols charged to the edge.
    pub fn prob_folded(&self, k: i32) -> f64 {
        let k = k.clamp(self.alphabet.lo, self.alphabet.hi);
        self.probs[(k - self.alphabet.lo) as usize]
    }

    pub fn entropy_bits(&self) -> f64 {
        self.probs.iter().filter(|&&p| p > 0.0).map(|p| -p * p.log2()).sum()
    }

    /// Mean and standard deviation of `k·q`.
    pub fn moments(&self, q: f64) -> (f64, f64) {
        let mut mean = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            mean += p * f64::from(self.alphabet.lo + i as i32) * q;
        }
        let mut var = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            let d = f64::from(self.alphabet.lo + i as i32) * q - mean;
            var += p * d * d;
        }
        (mean, var.sqrt())
    }

    pub fn to_table(&self) -> Result<FrequencyTable> {
        FrequencyTable::from_probs(self.alphabet, &self.probs)
    }
}

/// Anything that assigns probabilities to per-channel integer symbols.
pub trait SymbolModel {
    fn channels(&self) -> usize;
    fn probability(&self, channel: usize, symbol: i32) -> Result<f64>;
}

impl SymbolModel for [FrequencyTable] {
    fn channels(&self) -> usize {
        self.len()
    }

    fn probability(&self, channel: usize, symbol: i32) -> Result<f64> {
        self[channel].probability(symbol)
    }
}

/// Per-channel logistic model of the latents, valid for `q_min <= q <= q_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEntropyModel {
    loc: Vec<f64>,
    log_scale: Vec<f64>,
    q_min: f64,
    q_max: f64,
}

/// A channel model bound to one quantization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub q: f64,
    pub pmfs: Vec<ChannelPmf>,
}

impl QuantizedModel {
    pub fn tables(&self) -> Result<Vec<FrequencyTable>> {
        self.pmfs.iter().map(ChannelPmf::to_table).collect()
    }
}

impl SymbolModel for QuantizedModel {
    fn channels(&self) -> usize {
        self.pmfs.len()
    }

    fn probability(&self, channel: usize, symbol: i32) -> Result<f64> {
        self.pmfs[channel].prob(symbol)
    }
}

impl ChannelEntropyModel {
    pub fn new(loc: Vec<f64>, log_scale: Vec<f64>, q_min: f64, q_max: f64) -> Result<Self> {
        if loc.is_empty() || loc.len() != log_scale.len() {
            return Err(Error::Model("location and scale vectors must be non-empty and equal length".into()));
        }
        if !(q_min > 0.0 && q_min < q_max && q_max.is_finite()) {
            return Err(Error::Model(format!("invalid supported range [{q_min}, {q_max}]")));
        }
        if loc.iter().chain(&log_scale).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("entropy model parameters"));
        }
        Ok(Self { loc, log_scale, q_min, q_max })
    }

    /// Every channel `Logistic(0, 1)` over the default range.
    pub fn standard(channels: usize) -> Self {
        Self::new(vec![0.0; channels], vec![0.0; channels], DEFAULT_Q_MIN, DEFAULT_Q_MAX).expect("valid defaults")
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    pub fn loc(&self) -> &[f64] {
        &self.loc
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn scale(&self, channel: usize) -> f64 {
        self.log_scale[channel].exp()
    }

    pub fn q_min(&self) -> f64 {
        self.q_min
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    /// Inclusive at both ends.
    pub fn supports(&self, q: f64) -> bool {
        q >= self.q_min && q <= self.q_max
    }

    pub fn check_rate(&self, q: f64) -> Result<()> {
        if self.supports(q) {
            Ok(())
        } else {
            Err(Error::UnsupportedRate { q, q_min: self.q_min, q_max: self.q_max })
        }
    }

    pub fn pmf(&self, channel: usize, q: f64) -> Result<ChannelPmf> {
        self.check_rate(q)?;
        if channel >= self.channels() {
            return Err(Error::input(format!("channel {channel} out of {} channels", self.channels())));
        }
        ChannelPmf::new(self.loc[channel], self.scale(channel), q)
    }

    pub fn at(&self, q: f64) -> Result<QuantizedModel> {
        let pmfs = (0..self.channels()).map(|c| self.pmf(c, q)).collect::<Result<_>>()?;
        Ok(QuantizedModel { q, pmfs })
    }

    /// Frequency tables the encoder and decoder both derive from `(model, q)`.
    pub fn tables(&self, q: f64) -> Result<Vec<FrequencyTable>> {
        self.at(q)?.tables()
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 16 * self.channels());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels() as u32).to_le_bytes());
        out.extend_from_slice(&self.q_min.to_bits().to_le_bytes());
        out.extend_from_slice(&self.q_max.to_bits().to_le_bytes());
        for (m, s) in self.loc.iter().zip(&self.log_scale) {
            out.extend_from_slice(&m.to_bits().to_le_bytes());
            out.extend_from_slice(&s.to_bits().to_le_bytes());
        }
        out
    }

    /// First eight bytes of the SHA-256 of the serialized parameters.
    pub fn id(&self) -> u64 {
        let digest = Sha256::digest(self.body_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
    }

    /// `RDME` layout (little-endian): magic, `u32` version, `u32` channel
    /// count, `q_min` and `q_max` as raw `f64` bits, per channel the raw bits
    /// of `(loc, log_scale)`, then the `u64` model id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.id().to_le_bytes());
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            bytes.get(at..at + n).ok_or_else(|| Error::format("truncated entropy model file"))
        };
        if take(0, 4)? != MODEL_MAGIC {
            return Err(Error::format("not an RDME entropy model"));
        }
        let u32_at = |at| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().expect("4 bytes"))) };
        let u64_at = |at| -> Result<u64> { Ok(u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes"))) };
        let version = u32_at(4)?;
        if version != MODEL_VERSION {
            return Err(Error::format(format!("unsupported entropy model version {version}")));
        }
        let channels = u32_at(8)? as usize;
        let q_min = f64::from_bits(u64_at(12)?);
        let q_max = f64::from_bits(u64_at(20)?);
        let mut loc = Vec::with_capacity(channels.min(1 << 16));
        let mut log_scale = Vec::with_capacity(channels.min(1 << 16));
        for c in 0..channels {
            loc.push(f64::from_bits(u64_at(28 + 16 * c)?));
            log_scale.push(f64::from_bits(u64_at(36 + 16 * c)?));
        }
        let end = 28 + 16 * channels;
        let stored = u64_at(end)?;
        if bytes.len() != end + 8 {
            return Err(Error::format("trailing bytes after entropy model"));
        }
        let model = Self::new(loc, log_scale, q_min, q_max).map_err(|e| Error::format(e.to_string()))?;
        if model.id() != stored {
            return Err(Error::format("entropy model hash mismatch"));
        }
        Ok(model)
    }
}

/// `P(k)` for one channel: logistic CDF difference over `[(k-½)q, (k+½)q]`
/// with the tails folded into the edge symbols.
pub fn symbol_prob(model: &ChannelEntropyModel, channel: usize, k: i32, q: QuantScale) -> Result<f64> {
    model.pmf(channel, q.get())?.prob(k)
}

/// `Σ -log2 P(k)`, channel taken from the last dimension of `symbols`.
pub fn rate_bits<M: SymbolModel + ?Sized>(model: &M, symbols: &SymbolTensor) -> Result<f64> {
    let c = symbols.channels();
    if c != model.channels() {
        return Err(Error::Shape { expected: vec![model.channels()], got: vec![c] });
    }
    let mut bits = 0.0;
    for (i, &k) in symbols.data().iter().enumerate() {
        let p = model.probability(i % c, k)?;
        if !(p > 0.0) {
            return Err(Error::Model(format!("symbol {k} has zero probability")));
        }
        bits -= p.log2();
    }
    Ok(bits)
}

/// Rate in nats per element plus `λ·mean((ŷ_q - y)²)`.
pub fn rd_loss(model: &ChannelEntropyModel, y: &LatentTensor, q: QuantScale, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::input("lambda must be non-negative"));
    }
    if y.channels() != model.channels() {
        return Err(Error::Shape { expected: vec![model.channels()], got: vec![y.channels()] });
    }
    let bound = model.at(q.get())?;
    let symbols = symbolize(y, q)?;
    let c = symbols.channels();
    let bits: f64 = symbols.data().iter().enumerate().map(|(i, &k)| -bound.pmfs[i % c].prob_folded(k).log2()).sum();
    let distortion = quantize_scaled(y, q)?.mse(y)?;
    Ok(bits * std::f64::consts::LN_2 / y.len() as f64 + lambda * distortion)
}

/// Draw `k ~ P(k)` per element and return `(k·q - mean) / std` using the
/// channel's analytic moments.
pub fn entropy_model_sample(
    model: &ChannelEntropyModel,
    q: QuantScale,
    shape: &[usize],
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    let q = q.get();
    let c = *shape.last().ok_or_else(|| Error::input("empty shape"))?;
    if c != model.channels() {
        return Err(Error::Shape { expected: vec![model.channels()], got: vec![c] });
    }
    let bound = model.at(q)?;
    let mut samplers = Vec::with_capacity(c);
    for (channel, pmf) in bound.pmfs.iter().enumerate() {
        let (mean, std) = pmf.moments(q);
        if !(std > 1e-12 * q) {
            return Err(Error::Model(format!("channel {channel} has zero variance at q = {q}")));
        }
        let mut cdf = Vec::with_capacity(pmf.probs.len());
        let mut acc = 0.0;
        for p in &pmf.probs {
            acc += p;
            cdf.push(acc);
        }
        samplers.push((pmf.alphabet.lo, cdf, mean, std));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, cdf, mean, std) = &samplers[i % c];
        let u = rng.uniform() * cdf.last().copied().unwrap_or(1.0);
        let idx = cdf.partition_point(|&v| v <= u).min(cdf.len() - 1);
        let k = f64::from(*lo + idx as i32);
        data.push((k * q - mean) / std);
    }
    LatentTensor::new(shape.to_vec(), data)
}
