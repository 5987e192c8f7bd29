use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::input(format!("{width}x{height} image needs {} values, got {}", width * height, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn clamped(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    pub fn mse(&self, other: &ImageTensor) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape { expected: vec![self.height, self.width], got: vec![other.height, other.width] });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.pixels() as f64)
    }
}

/// `10·log10(1 / mse)` for unit peak; infinite for identical images.
pub fn psnr(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("truncated PGM header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("invalid PGM {what}")))
}

/// Binary PGM (`P5`), 8- or 16-bit.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::format("only binary PGM (P5) is supported"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let need = width * height * sample_bytes;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::format("truncated PGM raster"))?;
    let scale = maxval as f64;
    let data = if sample_bytes == 1 {
        raster.iter().map(|&b| f64::from(b).min(scale) / scale).collect()
    } else {
        raster.chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])).min(scale) / scale).collect()
    };
    ImageTensor::new(width, height, data)
}

/// 8-bit binary PGM of the clamped image.
pub fn encode_pgm(img: &ImageTensor) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read_pgm(path: &Path) -> Result<ImageTensor> {
    decode_pgm(&fs::read(path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, img: &ImageTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

/// Every `*.pgm` in `dir`, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<(String, ImageTensor)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!("no .pgm images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_pgm(p)?))
        })
        .collect()
}

/// Procedural texture patch: a tilted plane, a few oriented gratings and soft
/// blobs, plus faint pixel noise.
pub fn generate_texture(width: usize, height: usize, rng: &mut SeededRng) -> Result<ImageTensor> {
    use std::f64::consts::PI;
    let base = rng.uniform_in(0.3, 0.7);
    let (gx, gy) = (rng.uniform_in(-0.3, 0.3), rng.uniform_in(-0.3, 0.3));
    let gratings: Vec<(f64, f64, f64, f64)> = (0..1 + rng.below(3))
        .map(|_| {
            let angle = rng.uniform_in(0.0, PI);
            let period = rng.uniform_in(4.0, 24.0);
            let amp = rng.uniform_in(0.04, 0.15);
            (angle, 2.0 * PI / period, rng.uniform_in(0.0, 2.0 * PI), amp)
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.below(4))
        .map(|_| {
            (
                rng.uniform_in(0.0, width as f64),
                rng.uniform_in(0.0, height as f64),
                rng.uniform_in(3.0, 12.0),
                rng.uniform_in(-0.25, 0.25),
            )
        })
        .collect();
    let noise = rng.uniform_in(0.0, 0.02);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64 - 0.5, y as f64 / height as f64 - 0.5);
            let mut p = base + gx * u + gy * v;
            for &(angle, k, phase, amp) in &gratings {
                let t = x as f64 * angle.cos() + y as f64 * angle.sin();
                p += amp * (k * t + phase).sin();
            }
            for &(cx, cy, r, amp) in &blobs {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                p += amp * (-d2 / (2.0 * r * r)).exp();
            }
            p += noise * rng.standard_normal();
            data.push(p.clamp(0.0, 1.0));
        }
    }
    ImageTensor::new(width, height, data)
}

/// `count` textures, each from its own substream of `seed`.
pub fn generate_corpus(count: usize, size: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    let root = SeededRng::new(seed, crate::numerics::streams::DATA);
    (0..count).map(|i| generate_texture(size, size, &mut root.substream(i as u32))).collect()
}
