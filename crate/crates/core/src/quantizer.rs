//! Quantization scaling `⌈y/q⌋·q` and its additive-uniform-noise surrogate.
//!
//! Rounding is half away from zero on both encoder and decoder.

use crate::numerics::{LatentTensor, SeededRng};
use crate::{Error, Result};

/// Positive quantization scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantScale(f64);

impl QuantScale {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::input(format!("quantization scale must be positive and finite, got {q}")));
        }
        Ok(Self(q))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Inclusive symbol range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    pub lo: i32,
    pub hi: i32,
}

impl Alphabet {
    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo > hi {
            return Err(Error::input(format!("empty alphabet [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, k: i64) -> bool {
        (i64::from(self.lo)..=i64::from(self.hi)).contains(&k)
    }

    pub fn size(&self) -> usize {
        (i64::from(self.hi) - i64::from(self.lo) + 1) as usize
    }
}

/// Integer symbols with the shape of the latent they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl SymbolTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(Error::input(format!("shape {shape:?} does not hold {} symbols", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn channels(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn round_index(v: f64, q: f64) -> f64 {
    // f64::round is half away from zero
    (v / q).round()
}

/// `⌈y/q⌋·q` elementwise.
pub fn quantize_scaled(y: &LatentTensor, q: QuantScale) -> Result<LatentTensor> {
    let q = q.get();
    y.map(|v| round_index(v, q) * q)
}

/// `round(y/q)` as integers.
pub fn symbolize(y: &LatentTensor, q: QuantScale) -> Result<SymbolTensor> {
    let q = q.get();
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let k = round_index(v, q);
            if k < f64::from(i32::MIN) || k > f64::from(i32::MAX) {
                Err(Error::SymbolRange { symbol: k as i64, lo: i32::MIN, hi: i32::MAX })
            } else {
                Ok(k as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    SymbolTensor::new(y.shape().to_vec(), data)
}

/// `symbolize` restricted to an alphabet; out-of-range symbols are an error
/// unless `clamp` is set, in which case they are pinned to the nearest edge.
pub fn symbolize_bounded(y: &LatentTensor, q: QuantScale, alphabet: Alphabet, clamp: bool) -> Result<SymbolTensor> {
    let mut s = symbolize(y, q)?;
    for k in &mut s.data {
        if !alphabet.contains(i64::from(*k)) {
            if !clamp {
                return Err(Error::SymbolRange { symbol: i64::from(*k), lo: alphabet.lo, hi: alphabet.hi });
            }
            log::warn!("clamping symbol {k} into [{}, {}]", alphabet.lo, alphabet.hi);
            *k = (*k).clamp(alphabet.lo, alphabet.hi);
        }
    }
    Ok(s)
}

/// `k·q` elementwise.
pub fn desymbolize(k: &SymbolTensor, q: QuantScale) -> Result<LatentTensor> {
    let q = q.get();
    LatentTensor::new(k.shape.clone(), k.data.iter().map(|&s| f64::from(s) * q).collect())
}

/// `y + u·q` with `u ~ U[-0.5, 0.5)` per element.
pub fn simulate_quantize(y: &LatentTensor, q: f64, rng: &mut SeededRng) -> Result<LatentTensor> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::input(format!("simulated quantization needs q >= 0, got {q}")));
    }
    if q == 0.0 {
        return Ok(y.clone());
    }
    let data = y.data().iter().map(|&v| v + rng.uniform_centered() * q).collect();
    LatentTensor::new(y.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::streams;
    use proptest::prelude::*;

    fn scalar(v: f64) -> LatentTensor {
        LatentTensor::from_vec(vec![v]).unwrap()
    }

    fn qs(q: f64) -> QuantScale {
        QuantScale::new(q).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_scaled(&scalar(2.3), qs(1.0)).unwrap().data(), &[2.0]);
        assert_eq!(quantize_scaled(&scalar(2.3), qs(0.5)).unwrap().data(), &[2.5]);
        assert_eq!(quantize_scaled(&scalar(-2.5), qs(1.0)).unwrap().data(), &[-3.0]);
        assert_eq!(quantize_scaled(&scalar(2.5), qs(1.0)).unwrap().data(), &[3.0]);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(QuantScale::new(0.0).is_err());
        assert!(QuantScale::new(-0.1).is_err());
        assert!(QuantScale::new(f64::NAN).is_err());
    }

    #[test]
    fn symbol_examples() {
        let k = symbolize(&scalar(2.3), qs(0.5)).unwrap();
        assert_eq!(k.data(), &[5]);
        assert_eq!(desymbolize(&k, qs(0.5)).unwrap().data(), &[2.5]);
        for q in [0.05, 0.7, 3.0] {
            assert_eq!(symbolize(&scalar(0.0), qs(q)).unwrap().data(), &[0]);
        }
    }

    #[test]
    fn bounded_symbols_error_or_clamp() {
        let y = LatentTensor::from_vec(vec![0.0, 9.0, -9.0]).unwrap();
        let a = Alphabet::new(-4, 4).unwrap();
        assert!(matches!(
            symbolize_bounded(&y, qs(1.0), a, false),
            Err(Error::SymbolRange { symbol: 9, lo: -4, hi: 4 })
        ));
        assert_eq!(symbolize_bounded(&y, qs(1.0), a, true).unwrap().data(), &[0, 4, -4]);
    }

    #[test]
    fn simulated_zero_scale_is_identity() {
        let y = LatentTensor::from_vec(vec![0.3, -1.2, 7.0]).unwrap();
        let mut rng = SeededRng::new(0, streams::CORRUPTION);
        assert_eq!(simulate_quantize(&y, 0.0, &mut rng).unwrap(), y);
        assert!(simulate_quantize(&y, -1.0, &mut rng).is_err());
    }

    #[test]
    fn simulated_noise_variance_is_one_twelfth() {
        let n = 1_000_000;
        let y = LatentTensor::zeros(&[n]);
        let mut rng = SeededRng::new(11, streams::CORRUPTION);
        let out = simulate_quantize(&y, 1.0, &mut rng).unwrap();
        let mean = out.data().iter().sum::<f64>() / n as f64;
        let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!((var - 1.0 / 12.0).abs() < 1e-3, "variance {var}");
        assert!(out.data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn mse_non_decreasing_over_q_grid() {
        let mut rng = SeededRng::new(5, streams::DATA);
        let y = LatentTensor::from_vec((0..20_000).map(|_| 4.0 * rng.standard_normal()).collect()).unwrap();
        let mut prev = 0.0;
        for i in 1..=20 {
            let q = 0.1 * i as f64;
            let mse = quantize_scaled(&y, qs(q)).unwrap().mse(&y).unwrap();
            assert!(mse >= prev, "mse dropped at q = {q}");
            prev = mse;
        }
    }

    proptest! {
        #[test]
        fn quantize_invariants(values in prop::collection::vec(-50.0f64..50.0, 1..64), q in 0.01f64..4.0) {
            let y = LatentTensor::from_vec(values).unwrap();
            let s = qs(q);
            let once = quantize_scaled(&y, s).unwrap();
            let twice = quantize_scaled(&once, s).unwrap();
            prop_assert_eq!(&once, &twice);
            let composed = desymbolize(&symbolize(&y, s).unwrap(), s).unwrap();
            prop_assert_eq!(&composed, &once);
            for (a, b) in once.data().iter().zip(y.data()) {
                prop_assert!((a - b).abs() <= q / 2.0 * (1.0 + 1e-12));
            }
        }

        #[test]
        fn simulated_support_bound(values in prop::collection::vec(-5.0f64..5.0, 1..64), q in 0.0f64..3.0, seed in any::<u64>()) {
            let y = LatentTensor::from_vec(values).unwrap();
            let mut rng = SeededRng::new(seed, streams::CORRUPTION);
            let out = simulate_quantize(&y, q, &mut rng).unwrap();
            for (a, b) in out.data().iter().zip(y.data()) {
                prop_assert!((a - b).abs() <= q / 2.0 * (1.0 + 1e-12));
            }
        }
    }
}
