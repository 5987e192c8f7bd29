use std::fmt::Write as _;
use std::io::Write;

use super::codec::{decode_image, encode_image, DecodeOptions};
use super::image::{psnr, ImageTensor};
use crate::diffusion::{forward_compress, reverse_sample, Denoiser, NoiseForm, SamplerConfig};
use crate::entropy::ChannelEntropyModel;
use crate::numerics::{streams, LatentTensor, SeededRng};
use crate::oracle::{sliced_w1, GaussianMixture, GmmOracle, PointMixture, PointOracle, MIN_INTERVALS};
use crate::quantizer::{simulate_quantize, QuantScale};
use crate::{Error, Result};

/// Column order of the RD-sweep CSV. `bits` counts the whole file, header
/// included; `bpp = bits / pixels`.
pub const RD_CSV_HEADER: &str = "image,q0,steps,beta,noise,bits,pixels,bpp,mse,psnr";

#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub image: String,
    pub q0: f64,
    pub steps: usize,
    pub beta: f64,
    pub noise: NoiseForm,
    pub bits: u64,
    pub pixels: usize,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
}

impl RdPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.8e},{:.4}",
            self.image, self.q0, self.steps, self.beta, self.noise, self.bits, self.pixels, self.bpp, self.mse, self.psnr
        )
    }
}

/// Encode every image at every `q_0`, then decode once without reverse steps
/// and once with `options` (skipped when it also has zero steps).
pub fn rd_sweep(
    images: &[(String, ImageTensor)],
    q_grid: &[f64],
    model: &ChannelEntropyModel,
    denoiser: Option<&dyn Denoiser>,
    options: &DecodeOptions,
) -> Result<Vec<RdPoint>> {
    let mut points = Vec::new();
    for (name, img) in images {
        for &q in q_grid {
            let enc = encode_image(img, QuantScale::new(q)?, model)?;
            let mut variants = vec![DecodeOptions::passthrough()];
            if options.steps > 0 {
                variants.push(*options);
            }
            for opts in variants {
                let out = decode_image(&enc.bytes, model, denoiser, &opts)?;
                let mse = out.mse(img)?;
                points.push(RdPoint {
                    image: name.clone(),
                    q0: q,
                    steps: opts.steps,
                    beta: opts.beta,
                    noise: opts.noise,
                    bits: enc.bits(),
                    pixels: img.pixels(),
                    bpp: enc.bpp(),
                    mse,
                    psnr: psnr(mse),
                });
            }
        }
    }
    Ok(points)
}

pub fn write_rd_csv(points: &[RdPoint], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{RD_CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{}", p.csv_row())?;
    }
    Ok(())
}

/// Mean bpp against mean PSNR per `(steps, q_0)`, one polyline per step count.
pub fn rd_svg(points: &[RdPoint]) -> String {
    let mut series: Vec<(usize, Vec<(f64, f64, f64, usize)>)> = Vec::new();
    for p in points {
        let idx = match series.iter().position(|s| s.0 == p.steps) {
            Some(i) => i,
            None => {
                series.push((p.steps, Vec::new()));
                series.len() - 1
            }
        };
        let s = &mut series[idx].1;
        match s.iter_mut().find(|e| e.0 == p.q0) {
            Some(e) => {
                e.1 += p.bpp;
                e.2 += p.psnr;
                e.3 += 1;
            }
            None => s.push((p.q0, p.bpp, p.psnr, 1)),
        }
    }
    let curves: Vec<(usize, Vec<(f64, f64)>)> = series
        .into_iter()
        .map(|(steps, s)| {
            let mut pts: Vec<(f64, f64)> = s.iter().map(|e| (e.1 / e.3 as f64, e.2 / e.3 as f64)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (steps, pts)
        })
        .collect();
    let all = curves.iter().flat_map(|c| c.1.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let (w, h, pad) = (640.0, 480.0, 50.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">bpp</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">PSNR (dB)</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(svg, r#"<text x="{pad}" y="{}" font-size="10">{x0:.3}</text>"#, h - pad + 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x1:.3}</text>"#, w - pad, h - pad + 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0:.2}</text>"#, pad - 4.0, h - pad);
    let _ = writeln!(svg, r#"<text x="{}" y="{pad}" font-size="10" text-anchor="end">{y1:.2}</text>"#, pad - 4.0);
    for (i, (steps, pts)) in curves.iter().enumerate() {
        let color = colors[i % colors.len()];
        let coords: Vec<String> =
            pts.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}" font-size="12">N = {steps}</text>"#,
            w - pad - 60.0,
            pad + 15.0 * (i + 1) as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Data source for the sampler ablation. `Empirical` draws rows of a latent
/// tensor with replacement and has no closed-form oracle.
#[derive(Debug, Clone)]
pub enum Source {
    Points(PointMixture),
    Gaussian(GaussianMixture),
    Empirical(LatentTensor),
}

impl Source {
    pub fn dim(&self) -> usize {
        match self {
            Source::Points(m) => m.dim(),
            Source::Gaussian(m) => m.dim(),
            Source::Empirical(y) => y.channels(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<LatentTensor> {
        match self {
            Source::Points(m) => m.sample(n, rng),
            Source::Gaussian(m) => m.sample(n, rng),
            Source::Empirical(y) => {
                if y.rows() == 0 {
                    return Err(Error::input("empirical source has no rows"));
                }
                let rows: Vec<&[f64]> = (0..n).map(|_| y.row(rng.below(y.rows()))).collect();
                LatentTensor::stack_rows(&rows)
            }
        }
    }

    /// Posterior-mean denoiser; point mixtures fall back to the nearest atom
    /// for states no atom can explain.
    pub fn oracle(&self) -> Result<Box<dyn Denoiser + Send + Sync>> {
        match self {
            Source::Points(m) => Ok(Box::new(PointOracle { mix: m.clone(), nearest_fallback: true })),
            Source::Gaussian(m) => {
                Ok(Box::new(GmmOracle { mix: m.clone(), intervals: MIN_INTERVALS, tail_fallback: true }))
            }
            Source::Empirical(_) => Err(Error::input("an empirical source needs a trained denoiser")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplerEval {
    pub source: Source,
    pub q0: f64,
    pub steps: usize,
    pub betas: Vec<f64>,
    pub forms: Vec<NoiseForm>,
    pub samples: usize,
    pub directions: usize,
    pub seed: u64,
    /// Corrupt with [`forward_compress`] (lattice where the model supports
    /// `q_0`) instead of simulated quantization.
    pub lattice: bool,
}

pub const SAMPLER_CSV_HEADER: &str = "beta,noise,steps,q0,status,sliced_w1,mse";

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerEvalRow {
    pub beta: f64,
    pub noise: NoiseForm,
    pub steps: usize,
    pub q0: f64,
    /// `ok`; `unsupported` when the entropy-model noise form needed a scale
    /// outside the model's range; `degenerate` when a channel's distribution
    /// at that scale had zero variance.
    pub status: &'static str,
    pub sliced_w1: Option<f64>,
    pub mse: Option<f64>,
}

impl SamplerEvalRow {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.beta,
            self.noise,
            self.steps,
            self.q0,
            self.status,
            opt(self.sliced_w1),
            opt(self.mse)
        )
    }
}

/// Corrupt `samples` draws at `q_0`, reverse them for every `(β, noise form)`
/// and compare against the clean draws.
pub fn eval_sampler(
    cfg: &SamplerEval,
    model: &ChannelEntropyModel,
    denoiser: Option<&dyn Denoiser>,
) -> Result<Vec<SamplerEvalRow>> {
    if cfg.samples == 0 {
        return Err(Error::input("sampler evaluation needs samples"));
    }
    if model.channels() != cfg.source.dim() {
        return Err(Error::Shape { expected: vec![cfg.source.dim()], got: vec![model.channels()] });
    }
    let q0 = QuantScale::new(cfg.q0)?;
    let mut data_rng = SeededRng::new(cfg.seed, streams::EVAL);
    let clean = cfg.source.sample(cfg.samples, &mut data_rng)?;
    let corrupted = if cfg.lattice {
        forward_compress(&clean, q0, model, &mut data_rng)?
    } else {
        simulate_quantize(&clean, cfg.q0, &mut data_rng)?
    };
    let oracle;
    let den: &dyn Denoiser = match denoiser {
        Some(d) => d,
        None => {
            oracle = cfg.source.oracle()?;
            oracle.as_ref()
        }
    };
    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        for &noise in &cfg.forms {
            let sampler = SamplerConfig::new(q0, cfg.steps, beta, noise, cfg.seed)?;
            let base = SamplerEvalRow { beta, noise, steps: cfg.steps, q0: cfg.q0, status: "ok", sliced_w1: None, mse: None };
            let out = match reverse_sample(&corrupted, &sampler, den, model) {
                Ok(out) => out,
                Err(Error::UnsupportedRate { .. }) if noise == NoiseForm::EntropyModel => {
                    rows.push(SamplerEvalRow { status: "unsupported", ..base });
                    continue;
                }
                Err(Error::Model(_)) if noise == NoiseForm::EntropyModel => {
                    rows.push(SamplerEvalRow { status: "degenerate", ..base });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut proj = SeededRng::new(cfg.seed, streams::PROJECTIONS);
            let w = sliced_w1(&out, &clean, cfg.directions, &mut proj)?;
            rows.push(SamplerEvalRow { sliced_w1: Some(w), mse: Some(out.mse(&clean)?), ..base });
        }
    }
    Ok(rows)
}

pub fn write_sampler_csv(rows: &[SamplerEvalRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{SAMPLER_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rd_csv_golden() {
        let p = RdPoint {
            image: "a.pgm".into(),
            q0: 0.5,
            steps: 2,
            beta: 0.075,
            noise: NoiseForm::Gaussian,
            bits: 1024,
            pixels: 4096,
            bpp: 0.25,
            mse: 0.001,
            psnr: 30.0,
        };
        let mut out = Vec::new();
        write_rd_csv(&[p], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "image,q0,steps,beta,noise,bits,pixels,bpp,mse,psnr\na.pgm,0.5,2,0.075,gaussian,1024,4096,0.250000,1.00000000e-3,30.0000\n"
        );
    }

    #[test]
    fn sampler_csv_golden() {
        let rows = [
            SamplerEvalRow { beta: 0.0, noise: NoiseForm::Uniform, steps: 2, q0: 0.7, status: "ok", sliced_w1: Some(0.5), mse: Some(0.25) },
            SamplerEvalRow { beta: 0.1, noise: NoiseForm::EntropyModel, steps: 2, q0: 3.0, status: "unsupported", sliced_w1: None, mse: None },
        ];
        let mut out = Vec::new();
        write_sampler_csv(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "beta,noise,steps,q0,status,sliced_w1,mse\n0,uniform,2,0.7,ok,5.00000000e-1,2.50000000e-1\n0.1,entropy,2,3,unsupported,,\n"
        );
    }

    #[test]
    fn svg_is_well_formed() {
        let mk = |steps, q0, bpp, psnr| RdPoint {
            image: "x".into(),
            q0,
            steps,
            beta: 0.0,
            noise: NoiseForm::None,
            bits: 8,
            pixels: 64,
            bpp,
            mse: 0.01,
            psnr,
        };
        let svg = rd_svg(&[mk(0, 0.5, 1.0, 30.0), mk(0, 1.0, 0.5, 25.0), mk(2, 0.5, 1.0, 31.0), mk(2, 1.0, 0.5, 26.0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn unsupported_entropy_rows_are_flagged() {
        let cfg = SamplerEval {
            source: Source::Points(PointMixture::uniform_1d(&[-1.0, 1.0]).unwrap()),
            q0: 6.0,
            steps: 2,
            betas: vec![0.0, 0.1],
            forms: vec![NoiseForm::Gaussian, NoiseForm::EntropyModel],
            samples: 200,
            directions: 4,
            seed: 1,
            lattice: false,
        };
        let rows = eval_sampler(&cfg, &ChannelEntropyModel::standard(1), None).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].sliced_w1, rows[1].sliced_w1);
        assert_eq!(rows[3].status, "unsupported");
        assert_eq!(rows[2].status, "ok");
    }

    #[test]
    fn empirical_source_resamples_rows_and_needs_a_denoiser() {
        let y = LatentTensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let src = Source::Empirical(y.clone());
        assert_eq!(src.dim(), 2);
        let mut rng = SeededRng::new(3, streams::EVAL);
        let s = src.sample(50, &mut rng).unwrap();
        assert_eq!(s.shape(), &[50, 2]);
        assert!((0..50).all(|i| (0..3).any(|j| s.row(i) == y.row(j))));
        assert!(src.oracle().is_err());
    }
}
