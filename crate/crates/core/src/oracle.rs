//! Exact posterior-mean denoisers for analytic sources under scaled uniform
//! corruption `x_t = x_0 + q·u`, `u ~ U[-½, ½)^d`, and sample-based
//! Wasserstein distances.
//!
//! The corruption likelihood is flat on the box `‖x_t − x_0‖_∞ ≤ q/2`, so the
//! posterior is the prior restricted to that box.

use crate::diffusion::Denoiser;
use crate::numerics::{LatentTensor, SeededRng};
use crate::{Error, Result};

pub const MIN_INTERVALS: usize = 4096;
const SIGMA_SPAN: f64 = 6.0;

fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::input("mixture weights must be positive and finite"));
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

fn draw_component(weights: &[f64], rng: &mut SeededRng) -> usize {
    let mut u = rng.uniform();
    for (j, w) in weights.iter().enumerate() {
        if u < *w {
            return j;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Weighted atoms in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMixture {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl PointMixture {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::input("one weight per atom required"));
        }
        let weights = normalized_weights(&weights)?;
        let dim = atoms[0].len();
        if dim == 0 || atoms.iter().any(|a| a.len() != dim || a.iter().any(|v| !v.is_finite())) {
            return Err(Error::input("atoms must share a positive dimension and be finite"));
        }
        for i in 0..atoms.len() {
            if atoms[..i].contains(&atoms[i]) {
                return Err(Error::input(format!("duplicate atom {:?}", atoms[i])));
            }
        }
        Ok(Self { atoms, weights })
    }

    /// Scalar atoms with equal weights.
    pub fn uniform_1d(atoms: &[f64]) -> Result<Self> {
        Self::new(atoms.iter().map(|&a| vec![a]).collect(), vec![1.0; atoms.len()])
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<LatentTensor> {
        let mut data = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            data.extend_from_slice(&self.atoms[draw_component(&self.weights, rng)]);
        }
        LatentTensor::new(vec![n, self.dim()], data)
    }

    fn nearest(&self, x: &[f64]) -> &[f64] {
        let dist = |a: &[f64]| a.iter().zip(x).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        self.atoms
            .iter()
            .min_by(|a, b| dist(a).total_cmp(&dist(b)))
            .expect("non-empty mixture")
    }
}

/// Mean of the atoms inside the box of half-width `q/2` around `x`, weighted
/// by their prior mass.
pub fn posterior_mean_points(mix: &PointMixture, x: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0) {
        return Err(Error::input(format!("q must be positive, got {q}")));
    }
    if x.len() != mix.dim() {
        return Err(Error::Shape { expected: vec![mix.dim()], got: vec![x.len()] });
    }
    let half = q / 2.0;
    let mut acc = vec![0.0; x.len()];
    let mut mass = 0.0;
    for (atom, w) in mix.atoms.iter().zip(&mix.weights) {
        if atom.iter().zip(x).all(|(a, v)| (a - v).abs() <= half) {
            mass += w;
            for (s, a) in acc.iter_mut().zip(atom) {
                *s += w * a;
            }
        }
    }
    if mass == 0.0 {
        return Err(Error::EmptySupport(x.to_vec()));
    }
    Ok(acc.into_iter().map(|s| s / mass).collect())
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::input("one mean, variance and weight per component required"));
        }
        let weights = normalized_weights(&weights)?;
        let dim = means[0].len();
        let shapes_ok = dim > 0 && means.iter().chain(&variances).all(|v| v.len() == dim);
        if !shapes_ok {
            return Err(Error::input("components must share a positive dimension"));
        }
        if means.iter().flatten().any(|v| !v.is_finite())
            || variances.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::input("means must be finite and variances positive"));
        }
        Ok(Self { means, variances, weights })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<LatentTensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let j = draw_component(&self.weights, rng);
            for k in 0..d {
                data.push(self.means[j][k] + self.variances[j][k].sqrt() * rng.standard_normal());
            }
        }
        LatentTensor::new(vec![n, d], data)
    }
}

/// Composite Simpson integrals of `φ(t)` and `t·φ(t)` over `[a, b]` for the
/// density of `N(mu, var)`.
fn window_moments(a: f64, b: f64, mu: f64, var: f64, intervals: usize) -> (f64, f64) {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let pdf = |t: f64| norm * (-(t - mu) * (t - mu) / (2.0 * var)).exp();
    let (mut m0, mut m1) = (0.0, 0.0);
    for i in 0..=n {
        let t = a + h * i as f64;
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = pdf(t);
        m0 += c * p;
        m1 += c * p * t;
    }
    (m0 * h / 3.0, m1 * h / 3.0)
}

/// Posterior mean under a Gaussian mixture by per-dimension Simpson
/// quadrature over the corruption box clipped to `±6σ` of each component.
/// `intervals` is raised to at least [`MIN_INTERVALS`].
pub fn posterior_mean_gmm(mix: &GaussianMixture, x: &[f64], q: f64, intervals: usize) -> Result<Vec<f64>> {
    if !(q > 0.0) {
        return Err(Error::input(format!("q must be positive, got {q}")));
    }
    if x.len() != mix.dim() {
        return Err(Error::Shape { expected: vec![mix.dim()], got: vec![x.len()] });
    }
    let intervals = intervals.max(MIN_INTERVALS);
    let half = q / 2.0;
    // per component: log mass and conditional mean per dimension
    let mut comps: Vec<(f64, Vec<f64>)> = Vec::with_capacity(mix.weights.len());
    for j in 0..mix.weights.len() {
        let mut log_mass = mix.weights[j].ln();
        let mut cond = Vec::with_capacity(x.len());
        for (k, &xk) in x.iter().enumerate() {
            let (mu, var) = (mix.means[j][k], mix.variances[j][k]);
            let span = SIGMA_SPAN * var.sqrt();
            let a = (xk - half).max(mu - span);
            let b = (xk + half).min(mu + span);
            if a >= b {
                log_mass = f64::NEG_INFINITY;
                break;
            }
            let (m0, m1) = window_moments(a, b, mu, var, intervals);
            if !(m0 > 0.0) {
                log_mass = f64::NEG_INFINITY;
                break;
            }
            log_mass += m0.ln();
            cond.push(m1 / m0);
        }
        if log_mass.is_finite() {
            comps.push((log_mass, cond));
        }
    }
    let top = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Underflow);
    }
    let mut out = vec![0.0; x.len()];
    let mut total = 0.0;
    for (log_mass, cond) in &comps {
        let w = (log_mass - top).exp();
        total += w;
        for (o, c) in out.iter_mut().zip(cond) {
            *o += w * c;
        }
    }
    Ok(out.into_iter().map(|o| o / total).collect())
}

fn map_rows(x: &LatentTensor, dim: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<LatentTensor> {
    if x.channels() != dim {
        return Err(Error::Shape { expected: vec![dim], got: vec![x.channels()] });
    }
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        data.extend(f(x.row(i))?);
    }
    LatentTensor::new(x.shape().to_vec(), data)
}

/// Point-mixture posterior mean as a denoiser. With `nearest_fallback`, a
/// state whose box holds no atom maps to the nearest atom instead of failing.
#[derive(Debug, Clone)]
pub struct PointOracle {
    pub mix: PointMixture,
    pub nearest_fallback: bool,
}

impl Denoiser for PointOracle {
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        map_rows(x, self.mix.dim(), |row| match posterior_mean_points(&self.mix, row, q) {
            Err(Error::EmptySupport(_)) if self.nearest_fallback => Ok(self.mix.nearest(row).to_vec()),
            other => other,
        })
    }
}

/// Gaussian-mixture posterior mean as a denoiser. With `tail_fallback`, a
/// box beyond `±6σ` of every component maps to its point closest to the
/// nearest component mean, the far-tail limit of the truncated mean.
#[derive(Debug, Clone)]
pub struct GmmOracle {
    pub mix: GaussianMixture,
    pub intervals: usize,
    pub tail_fallback: bool,
}

impl GmmOracle {
    fn tail_point(&self, x: &[f64], q: f64) -> Vec<f64> {
        let half = q / 2.0;
        let clamp_to_box = |j: usize| -> Vec<f64> {
            x.iter().zip(&self.mix.means[j]).map(|(&v, &m)| m.clamp(v - half, v + half)).collect()
        };
        let distance = |j: usize, p: &[f64]| -> f64 {
            p.iter().zip(&self.mix.means[j]).zip(&self.mix.variances[j]).map(|((a, m), s)| (a - m).powi(2) / s).sum()
        };
        let best = (0..self.mix.weights.len())
            .min_by(|&a, &b| distance(a, &clamp_to_box(a)).total_cmp(&distance(b, &clamp_to_box(b))))
            .expect("non-empty mixture");
        clamp_to_box(best)
    }
}

impl Denoiser for GmmOracle {
    fn denoise(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        map_rows(x, self.mix.dim(), |row| match posterior_mean_gmm(&self.mix, row, q, self.intervals) {
            Err(Error::Underflow) if self.tail_fallback => Ok(self.tail_point(row, q)),
            other => other,
        })
    }
}

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("samples"));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    // integrate |F_a⁻¹(u) − F_b⁻¹(u)| over the merged quantile breakpoints
    let (n, m) = (a.len() as u128, b.len() as u128);
    let denom = (n * m) as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut last: u128 = 0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        total += (next - last) as f64 * (a[i] - b[j]).abs();
        last = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total / denom
}

/// 1-Wasserstein distance between two empirical distributions. Unequal
/// sample counts are handled by exact integration of the quantile functions.
pub fn w1_distance_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("W1 needs non-empty sample sets"));
    }
    Ok(w1_sorted(&sorted(a)?, &sorted(b)?))
}

/// Mean W1 over `directions` random unit projections of `[n, d]` samples.
pub fn sliced_w1(a: &LatentTensor, b: &LatentTensor, directions: usize, rng: &mut SeededRng) -> Result<f64> {
    let d = a.channels();
    if b.channels() != d || a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::input(format!(
            "sliced W1 needs matching [n, d] samples, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if directions == 0 {
        return Err(Error::input("at least one projection direction required"));
    }
    let mut total = 0.0;
    let mut theta = vec![0.0; d];
    for _ in 0..directions {
        let norm = loop {
            theta.iter_mut().for_each(|t| *t = rng.standard_normal());
            let n = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            if n > 1e-12 {
                break n;
            }
        };
        theta.iter_mut().for_each(|t| *t /= norm);
        let project = |x: &LatentTensor| -> Vec<f64> {
            (0..x.rows()).map(|i| x.row(i).iter().zip(&theta).map(|(u, v)| u * v).sum()).collect()
        };
        total += w1_distance_1d(&project(a), &project(b))?;
    }
    Ok(total / directions as f64)
}
