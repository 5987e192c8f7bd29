//! Dense reverse network `D(x, q) -> x̂₀`.
//!
//! The input row is the flattened latent concatenated with a Fourier embedding
//! of `ln(q / q_min)`. Hidden layers use SiLU; the output layer is linear, so a
//! network with all-zero weights returns its final bias.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use super::checkpoint::{Checkpoint, NamedTensor};
use super::optim::ParamSet;
use super::rng::SeededRng;
use super::tensor::LatentTensor;
use crate::{Error, Result};

/// Default ratio between consecutive embedding frequencies (`ω_k = ratio^k`).
pub const DEFAULT_EMBED_RATIO: f64 = 0.5;

/// Fourier embedding of `c = ln(max(q, q_min) / q_min)` with frequencies
/// `ω_k = 0.5^k`, laid out as `[sin ω₀c, cos ω₀c, sin ω₁c, cos ω₁c, …]`.
pub fn q_embed(q: f64, dims: usize, q_min: f64) -> Result<Vec<f64>> {
    if dims == 0 || dims % 2 != 0 {
        return Err(Error::input(format!("embedding dims must be even and positive, got {dims}")));
    }
    embed_with(q, &geometric_freqs(dims / 2, DEFAULT_EMBED_RATIO), q_min)
}

fn geometric_freqs(n: usize, ratio: f64) -> Vec<f64> {
    (0..n).map(|k| ratio.powi(k as i32)).collect()
}

fn embed_with(q: f64, freqs: &[f64], q_min: f64) -> Result<Vec<f64>> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::input(format!("q must be positive, got {q}")));
    }
    if !(q_min > 0.0) {
        return Err(Error::input(format!("q_min must be positive, got {q_min}")));
    }
    let c = (q.max(q_min) / q_min).ln();
    Ok(freqs.iter().flat_map(|w| [(w * c).sin(), (w * c).cos()]).collect())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Fully-connected layer, `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    /// Width of one latent row.
    pub data_dim: usize,
    pub hidden: usize,
    /// Number of dense layers, at least 2.
    pub depth: usize,
    pub embed_dims: usize,
    pub embed_ratio: f64,
    pub q_min: f64,
}

impl DenoiserConfig {
    pub fn new(data_dim: usize) -> Self {
        Self { data_dim, hidden: 256, depth: 4, embed_dims: 8, embed_ratio: DEFAULT_EMBED_RATIO, q_min: 0.05 }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    layers: Vec<Dense>,
    freqs: Vec<f64>,
    q_min: f64,
}

/// Gradients with the same layout as [`DenoiserParams`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads {
    pub layers: Vec<Dense>,
}

struct ForwardCache {
    // Input to each layer (layer 0 gets the concatenated row).
    inputs: Vec<Array2<f64>>,
    // Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

impl DenoiserParams {
    /// Random initialization with `N(0, 1/fan_in)` weights and zero biases.
    pub fn init(config: &DenoiserConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for layer in &mut params.layers {
            let std = (1.0 / layer.inputs() as f64).sqrt();
            layer.weight.mapv_inplace(|_| std * rng.standard_normal());
        }
        Ok(params)
    }

    pub fn zeros(config: &DenoiserConfig) -> Result<Self> {
        if config.depth < 2 || config.data_dim == 0 || config.hidden == 0 {
            return Err(Error::input("denoiser needs depth >= 2 and positive widths"));
        }
        if config.embed_dims % 2 != 0 {
            return Err(Error::input("embedding dims must be even"));
        }
        let mut widths = vec![config.data_dim + config.embed_dims];
        widths.extend(std::iter::repeat_n(config.hidden, config.depth - 1));
        widths.push(config.data_dim);
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            layers,
            freqs: geometric_freqs(config.embed_dims / 2, config.embed_ratio),
            q_min: config.q_min,
        })
    }

    pub fn from_parts(layers: Vec<Dense>, freqs: Vec<f64>, q_min: f64) -> Result<Self> {
        let p = Self { layers, freqs, q_min };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::input("denoiser needs at least two layers"));
        }
        if !(self.q_min > 0.0) || !self.q_min.is_finite() {
            return Err(Error::input("q_min must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::input(format!("layer {i} bias length mismatch")));
            }
            if i > 0 && self.layers[i - 1].outputs() != l.inputs() {
                return Err(Error::input(format!("layer {i} input width mismatch")));
            }
        }
        if self.layers[0].inputs() != self.data_dim() + 2 * self.freqs.len() {
            return Err(Error::input("first layer width does not match data dim plus embedding"));
        }
        let finite = self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.freqs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("denoiser parameters"));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn data_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn embed_dims(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn q_min(&self) -> f64 {
        self.q_min
    }

    /// Input width of every layer followed by the output width.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(Dense::inputs).collect();
        w.push(self.data_dim());
        w
    }

    pub fn embed(&self, q: f64) -> Result<Vec<f64>> {
        embed_with(q, &self.freqs, self.q_min)
    }

    fn check_input(&self, x: &LatentTensor) -> Result<()> {
        if x.channels() != self.data_dim() {
            let mut expected = x.shape().to_vec();
            *expected.last_mut().expect("non-empty shape") = self.data_dim();
            return Err(Error::Shape { expected, got: x.shape().to_vec() });
        }
        Ok(())
    }

    fn as_rows<'a>(&self, x: &'a LatentTensor) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((x.rows(), x.channels()), x.data()).expect("row view")
    }

    /// Evaluate `D(x, q)` on every row of `x` (last dim must equal the data dim).
    pub fn forward(&self, x: &LatentTensor, q: f64) -> Result<LatentTensor> {
        self.check_input(x)?;
        let qs = vec![q; x.rows()];
        let out = self.forward_rows(self.as_rows(x), &qs, None)?;
        LatentTensor::new(x.shape().to_vec(), out.iter().copied().collect())
    }

    /// Batched forward with a per-row scale.
    pub fn forward_batch(&self, x: ArrayView2<f64>, qs: &[f64]) -> Result<Array2<f64>> {
        self.forward_rows(x, qs, None)
    }

    fn forward_rows(&self, x: ArrayView2<f64>, qs: &[f64], mut cache: Option<&mut ForwardCache>) -> Result<Array2<f64>> {
        if x.ncols() != self.data_dim() || qs.len() != x.nrows() {
            return Err(Error::Shape { expected: vec![qs.len(), self.data_dim()], got: x.shape().to_vec() });
        }
        let mut emb = Array2::zeros((x.nrows(), self.embed_dims()));
        for (mut row, &q) in emb.rows_mut().into_iter().zip(qs) {
            for (dst, v) in row.iter_mut().zip(self.embed(q)?) {
                *dst = v;
            }
        }
        let mut h = concatenate(Axis(1), &[x, emb.view()]).expect("same row count");
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            let next = if i == last { z.clone() } else { z.mapv(silu) };
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
                c.pre.push(z);
            }
            h = next;
        }
        Ok(h)
    }

    /// Mean squared error of `D(x, q)` against `target` and its exact
    /// gradient with respect to every weight and bias.
    pub fn backward(&self, x: &LatentTensor, q: f64, target: &LatentTensor) -> Result<(f64, DenoiserGrads)> {
        x.ensure_same_shape(target)?;
        self.check_input(x)?;
        let qs = vec![q; x.rows()];
        self.backward_batch(self.as_rows(x), &qs, self.as_rows(target))
    }

    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        qs: &[f64],
        target: ArrayView2<f64>,
    ) -> Result<(f64, DenoiserGrads)> {
        if x.shape() != target.shape() {
            return Err(Error::Shape { expected: x.shape().to_vec(), got: target.shape().to_vec() });
        }
        let mut cache = ForwardCache { inputs: Vec::new(), pre: Vec::new() };
        let out = self.forward_rows(x, qs, Some(&mut cache))?;
        let residual = &out - &target;
        let n = residual.len() as f64;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = residual * (2.0 / n);
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i != last {
                delta.zip_mut_with(&cache.pre[i], |d, &z| *d *= silu_grad(z));
            }
            let weight = delta.t().dot(&cache.inputs[i]).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight);
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Ok((loss, DenoiserGrads { layers: grads }))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push(NamedTensor::new(
            "meta.widths",
            vec![self.layers.len() as u64 + 1],
            self.widths().iter().map(|&w| w as f64).collect(),
        ));
        ck.push(NamedTensor::scalar("meta.q_min", self.q_min));
        ck.push(NamedTensor::new("embed.freqs", vec![self.freqs.len() as u64], self.freqs.clone()));
        for (i, l) in self.layers.iter().enumerate() {
            let (o, n) = l.weight.dim();
            ck.push(NamedTensor::new(format!("layer{i}.weight"), vec![o as u64, n as u64], l.weight.iter().copied().collect()));
            ck.push(NamedTensor::new(format!("layer{i}.bias"), vec![o as u64], l.bias.to_vec()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let widths = &ck.require("meta.widths")?.data;
        let q_min = ck.scalar("meta.q_min")?;
        let freqs = ck.require("embed.freqs")?.data.clone();
        let mut layers = Vec::new();
        for i in 0..widths.len().saturating_sub(1) {
            let w = ck.require(&format!("layer{i}.weight"))?;
            let b = ck.require(&format!("layer{i}.bias"))?;
            let (o, n) = match w.dims.as_slice() {
                [o, n] => (*o as usize, *n as usize),
                _ => return Err(Error::format(format!("layer{i}.weight must be rank 2"))),
            };
            if o as f64 != widths[i + 1] || n as f64 != widths[i] || b.data.len() != o {
                return Err(Error::format(format!("layer{i} disagrees with meta.widths")));
            }
            let weight = Array2::from_shape_vec((o, n), w.data.clone()).map_err(|e| Error::format(e.to_string()))?;
            layers.push(Dense { weight, bias: Array1::from(b.data.clone()) });
        }
        Self::from_parts(layers, freqs, q_min).map_err(|e| Error::format(e.to_string()))
    }
}

fn dense_slices(layers: &[Dense]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("contiguous")])
        .collect()
}

fn dense_slices_mut(layers: &mut [Dense]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [l.weight.as_slice_mut().expect("standard layout"), l.bias.as_slice_mut().expect("contiguous")]
        })
        .collect()
}

impl ParamSet for DenoiserParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.layers)
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(&mut self.layers)
    }
}

impl ParamSet for DenoiserGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        dense_slices(&self.layers)
    }
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(&mut self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::streams;

    fn small(data_dim: usize, hidden: usize) -> DenoiserConfig {
        DenoiserConfig { data_dim, hidden, depth: 4, embed_dims: 4, embed_ratio: 0.5, q_min: 0.05 }
    }

    #[test]
    fn embed_at_q_min_is_unit_cosines() {
        let e = q_embed(0.05, 8, 0.05).unwrap();
        for pair in e.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn embed_pairs_lie_on_unit_circle() {
        for q in [0.01, 0.05, 0.3, 1.7, 40.0] {
            let e = q_embed(q, 12, 0.05).unwrap();
            for pair in e.chunks(2) {
                assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn embed_first_frequency_is_one() {
        let q_min = 0.05;
        let e = q_embed(q_min * std::f64::consts::E, 4, q_min).unwrap();
        assert!((e[0] - 1f64.sin()).abs() < 1e-15);
        assert!((e[1] - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn embed_rejects_bad_arguments() {
        assert!(q_embed(0.0, 4, 0.05).is_err());
        assert!(q_embed(-1.0, 4, 0.05).is_err());
        assert!(q_embed(1.0, 3, 0.05).is_err());
        // slightly below q_min clamps to c = 0
        let e = q_embed(0.05 * (1.0 - 1e-10), 2, 0.05).unwrap();
        assert_eq!(e, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_weights_return_final_bias() {
        let mut p = DenoiserParams::zeros(&small(3, 5)).unwrap();
        let last = p.layers_mut().last_mut().unwrap();
        last.bias = Array1::from(vec![0.5, -1.0, 2.0]);
        let x = LatentTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap();
        let y = p.forward(&x, 1.0).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let mut rng = SeededRng::new(1, streams::INIT);
        let p = DenoiserParams::init(&small(4, 8), &mut rng).unwrap();
        let x = LatentTensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = p.forward(&x, 0.4).unwrap();
        let b = p.forward(&x, 0.4).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        let bad = LatentTensor::zeros(&[3, 5]);
        assert!(matches!(p.forward(&bad, 0.4), Err(Error::Shape { .. })));
        assert!(p.forward(&x, 0.0).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_bias_gradient() {
        let mut rng = SeededRng::new(2, streams::INIT);
        let p = DenoiserParams::init(&small(2, 6), &mut rng).unwrap();
        let x = LatentTensor::new(vec![5, 2], (0..10).map(|i| (i as f64).sin()).collect()).unwrap();
        let target = p.forward(&x, 0.7).unwrap();
        let (loss, grads) = p.backward(&x, 0.7, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.layers.last().unwrap().bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residual_quadruples_loss() {
        let mut rng = SeededRng::new(3, streams::INIT);
        let p = DenoiserParams::init(&small(2, 6), &mut rng).unwrap();
        let x = LatentTensor::new(vec![4, 2], (0..8).map(|i| (i as f64).cos()).collect()).unwrap();
        let out = p.forward(&x, 0.3).unwrap();
        let t1 = out.map(|v| v + 0.25).unwrap();
        let t2 = out.map(|v| v + 0.5).unwrap();
        let (l1, _) = p.backward(&x, 0.3, &t1).unwrap();
        let (l2, _) = p.backward(&x, 0.3, &t2).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut rng = SeededRng::new(4, streams::INIT);
        let p = DenoiserParams::init(&small(3, 7), &mut rng).unwrap();
        let bytes = p.to_checkpoint().to_bytes();
        let back = DenoiserParams::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn widths_metadata() {
        let p = DenoiserParams::zeros(&small(3, 7)).unwrap();
        assert_eq!(p.widths(), vec![7, 7, 7, 7, 3]);
        assert_eq!(p.layers().len(), 4);
    }
}
