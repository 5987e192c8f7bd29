use std::sync::OnceLock;

use super::image::ImageTensor;
use crate::numerics::LatentTensor;
use crate::{Error, Result};

pub const BLOCK: usize = 8;
pub const COEFFS: usize = BLOCK * BLOCK;

/// Orthonormal DCT-II basis `C[k][n] = a(k)·cos(π(2n+1)k / 16)`.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; BLOCK]; BLOCK];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos();
            }
        }
        c
    })
}

pub fn blocks_across(len: usize) -> usize {
    len.div_ceil(BLOCK)
}

/// Block DCT of the edge-padded image. Row `b` of the `[blocks, 64]` result
/// holds block `b` in raster order; column `8u + v` is vertical frequency `u`,
/// horizontal frequency `v`.
pub fn analysis_transform(img: &ImageTensor) -> Result<LatentTensor> {
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (blocks_across(w), blocks_across(h));
    let c = basis();
    let mut out = Vec::with_capacity(bw * bh * COEFFS);
    let mut block = [[0.0; BLOCK]; BLOCK];
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for by in 0..bh {
        for bx in 0..bw {
            for (i, row) in block.iter_mut().enumerate() {
                let y = (by * BLOCK + i).min(h - 1);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = img.get((bx * BLOCK + j).min(w - 1), y);
                }
            }
            // tmp = C · block
            for u in 0..BLOCK {
                for j in 0..BLOCK {
                    tmp[u][j] = (0..BLOCK).map(|i| c[u][i] * block[i][j]).sum();
                }
            }
            // out = tmp · Cᵀ
            for u in 0..BLOCK {
                for v in 0..BLOCK {
                    out.push((0..BLOCK).map(|j| tmp[u][j] * c[v][j]).sum());
                }
            }
        }
    }
    LatentTensor::new(vec![bw * bh, COEFFS], out)
}

/// Inverse of [`analysis_transform`], cropped to `width x height`. Values are
/// not clamped.
pub fn synthesis_transform(y: &LatentTensor, width: usize, height: usize) -> Result<ImageTensor> {
    if width == 0 || height == 0 {
        return Err(Error::input("image dimensions must be positive"));
    }
    let (bw, bh) = (blocks_across(width), blocks_across(height));
    if y.shape() != [bw * bh, COEFFS] {
        return Err(Error::Shape { expected: vec![bw * bh, COEFFS], got: y.shape().to_vec() });
    }
    let c = basis();
    let mut img = vec![0.0; width * height];
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for by in 0..bh {
        for bx in 0..bw {
            let coef = y.row(by * bw + bx);
            // tmp = Cᵀ · Y
            for i in 0..BLOCK {
                for v in 0..BLOCK {
                    tmp[i][v] = (0..BLOCK).map(|u| c[u][i] * coef[u * BLOCK + v]).sum();
                }
            }
            for i in 0..BLOCK {
                let py = by * BLOCK + i;
                if py >= height {
                    break;
                }
                for j in 0..BLOCK {
                    let px = bx * BLOCK + j;
                    if px >= width {
                        break;
                    }
                    img[py * width + px] = (0..BLOCK).map(|v| tmp[i][v] * c[v][j]).sum();
                }
            }
        }
    }
    ImageTensor::new(width, height, img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{streams, SeededRng};

    #[test]
    fn constant_block_is_dc_only() {
        let img = ImageTensor::filled(8, 8, 0.3).unwrap();
        let y = analysis_transform(&img).unwrap();
        assert!((y.data()[0] - 8.0 * 0.3).abs() < 1e-12);
        assert!(y.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = SeededRng::new(1, streams::DATA);
        let img = ImageTensor::new(64, 40, (0..64 * 40).map(|_| rng.uniform()).collect()).unwrap();
        let y = analysis_transform(&img).unwrap();
        let back = synthesis_transform(&y, 64, 40).unwrap();
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        let ex: f64 = img.data().iter().map(|v| v * v).sum();
        assert!((y.sum_squares() - ex).abs() < 1e-12 * ex);
    }

    #[test]
    fn padding_replicates_edges_and_crops() {
        let mut rng = SeededRng::new(2, streams::DATA);
        let img = ImageTensor::new(13, 9, (0..13 * 9).map(|_| rng.uniform()).collect()).unwrap();
        let y = analysis_transform(&img).unwrap();
        assert_eq!(y.shape(), &[4, 64]);
        let back = synthesis_transform(&y, 13, 9).unwrap();
        assert!(img.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(synthesis_transform(&y, 24, 24).is_err());
    }
}
