use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::quantizer::Alphabet;
use crate::{Error, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Largest alphabet a table may carry; keeps the frequency floor of 1 affordable.
pub const MAX_ALPHABET: usize = 1 << 12;

/// Integer frequencies over `[lo, hi]` summing to `2^16`, every entry `>= 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    alphabet: Alphabet,
    freqs: Vec<u32>,
    // cum[i] = sum of freqs[..i]; cum.len() == freqs.len() + 1
    cum: Vec<u32>,
}

#[derive(PartialEq)]
struct Cost(f64, usize);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl FrequencyTable {
    pub fn from_freqs(alphabet: Alphabet, freqs: Vec<u32>) -> Result<Self> {
        if freqs.len() != alphabet.size() {
            return Err(Error::Model(format!(
                "{} frequencies for an alphabet of {} symbols",
                freqs.len(),
                alphabet.size()
            )));
        }
        if freqs.iter().any(|&f| f == 0) {
            return Err(Error::Model("zero frequency".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for &f in &freqs {
            acc += u64::from(f);
            if acc > u64::from(TOTAL_FREQ) {
                return Err(Error::Model("frequencies exceed total".into()));
            }
            cum.push(acc as u32);
        }
        if acc != u64::from(TOTAL_FREQ) {
            return Err(Error::Model(format!("frequencies sum to {acc}, expected {TOTAL_FREQ}")));
        }
        Ok(Self { alphabet, freqs, cum })
    }

    /// Quantize a probability vector: floor each target `p·2^16` (minimum 1),
    /// hand the leftover to the largest remainders, and take any excess where
    /// it costs the fewest expected bits.
    pub fn from_probs(alphabet: Alphabet, probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n != alphabet.size() {
            return Err(Error::Model("probability vector does not match alphabet".into()));
        }
        if n > MAX_ALPHABET {
            return Err(Error::Model(format!("alphabet of {n} symbols exceeds {MAX_ALPHABET}")));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Model("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Model("probabilities sum to zero".into()));
        }
        let total = f64::from(TOTAL_FREQ);
        let targets: Vec<f64> = probs.iter().map(|p| p / sum * total).collect();
        let mut freqs: Vec<i64> = targets.iter().map(|t| (t.floor() as i64).max(1)).collect();
        let mut diff = i64::from(TOTAL_FREQ) - freqs.iter().sum::<i64>();
        if diff > 0 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let ra = targets[a] - freqs[a] as f64;
                let rb = targets[b] - freqs[b] as f64;
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            for &i in order.iter().cycle() {
                if diff == 0 {
                    break;
                }
                freqs[i] += 1;
                diff -= 1;
            }
        } else if diff < 0 {
            // Each count goes where it raises the expected code length least:
            // removing one from symbol i costs t_i·ln(f_i / (f_i − 1)).
            let cost = |i: usize, f: i64| Cost(targets[i] * (f as f64 / (f - 1) as f64).ln(), i);
            let mut heap: BinaryHeap<Reverse<Cost>> =
                (0..n).filter(|&i| freqs[i] > 1).map(|i| Reverse(cost(i, freqs[i]))).collect();
            while diff < 0 {
                let Reverse(Cost(_, i)) = heap.pop().expect("total exceeds one count per symbol");
                freqs[i] -= 1;
                if freqs[i] > 1 {
                    heap.push(Reverse(cost(i, freqs[i])));
                }
                diff += 1;
            }
        }
        Self::from_freqs(alphabet, freqs.into_iter().map(|f| f as u32).collect())
    }

    pub fn uniform(alphabet: Alphabet) -> Result<Self> {
        Self::from_probs(alphabet, &vec![1.0; alphabet.size()])
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn index_of(&self, k: i32) -> Result<usize> {
        if !self.alphabet.contains(i64::from(k)) {
            return Err(Error::SymbolRange { symbol: i64::from(k), lo: self.alphabet.lo, hi: self.alphabet.hi });
        }
        Ok((i64::from(k) - i64::from(self.alphabet.lo)) as usize)
    }

    /// `(cumulative, frequency)` of symbol `k`.
    pub fn slot(&self, k: i32) -> Result<(u32, u32)> {
        let i = self.index_of(k)?;
        Ok((self.cum[i], self.freqs[i]))
    }

    /// Symbol whose cumulative interval contains `value < 2^16`.
    pub fn lookup(&self, value: u32) -> (i32, u32, u32) {
        // partition_point gives the first cum > value; the symbol is one before it
        let i = self.cum.partition_point(|&c| c <= value) - 1;
        (self.alphabet.lo + i as i32, self.cum[i], self.freqs[i])
    }

    pub fn probability(&self, k: i32) -> Result<f64> {
        let i = self.index_of(k)?;
        Ok(f64::from(self.freqs[i]) / f64::from(TOTAL_FREQ))
    }

    /// Ideal code length of `k` under this table, in bits.
    pub fn code_length(&self, k: i32) -> Result<f64> {
        Ok(-self.probability(k)?.log2())
    }
}
