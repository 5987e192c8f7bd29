use super::image::ImageTensor;
use super::transform::{analysis_transform, blocks_across, synthesis_transform, COEFFS};
use crate::diffusion::{reverse_sample, Denoiser, NoiseForm, SamplerConfig};
use crate::entropy::{decode_escaped, encode_escaped, ChannelEntropyModel, RangeDecoder, RangeEncoder};
use crate::numerics::LatentTensor;
use crate::quantizer::{desymbolize, symbolize, QuantScale, SymbolTensor};
use crate::{Error, Result};

pub const BITSTREAM_MAGIC: &[u8; 4] = b"RDMB";
pub const BITSTREAM_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 29;

/// Fixed 29-byte little-endian header: magic, `u8` version, `q_0` as raw
/// `f64` bits, `u16` width, `u16` height, `u64` entropy-model id, `u32`
/// payload length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitstreamHeader {
    pub q0: f64,
    pub width: u16,
    pub height: u16,
    pub model_id: u64,
    pub payload_len: u32,
}

impl BitstreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(BITSTREAM_MAGIC);
        out[4] = BITSTREAM_VERSION;
        out[5..13].copy_from_slice(&self.q0.to_bits().to_le_bytes());
        out[13..15].copy_from_slice(&self.width.to_le_bytes());
        out[15..17].copy_from_slice(&self.height.to_le_bytes());
        out[17..25].copy_from_slice(&self.model_id.to_le_bytes());
        out[25..29].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let h = bytes.get(..HEADER_LEN).ok_or_else(|| Error::format("bitstream shorter than its header"))?;
        if &h[..4] != BITSTREAM_MAGIC {
            return Err(Error::format("not an RDMB bitstream"));
        }
        if h[4] != BITSTREAM_VERSION {
            return Err(Error::format(format!("unsupported bitstream version {}", h[4])));
        }
        let header = Self {
            q0: f64::from_bits(u64::from_le_bytes(h[5..13].try_into().expect("8 bytes"))),
            width: u16::from_le_bytes([h[13], h[14]]),
            height: u16::from_le_bytes([h[15], h[16]]),
            model_id: u64::from_le_bytes(h[17..25].try_into().expect("8 bytes")),
            payload_len: u32::from_le_bytes(h[25..29].try_into().expect("4 bytes")),
        };
        if !(header.q0 > 0.0) || !header.q0.is_finite() || header.width == 0 || header.height == 0 {
            return Err(Error::format("invalid bitstream header fields"));
        }
        Ok(header)
    }

    pub fn latent_shape(&self) -> [usize; 2] {
        [blocks_across(self.width as usize) * blocks_across(self.height as usize), COEFFS]
    }
}

/// A complete bitstream file.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub header: BitstreamHeader,
    pub bytes: Vec<u8>,
}

impl Encoded {
    pub fn bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }

    /// File bits, header included, per pixel.
    pub fn bpp(&self) -> f64 {
        self.bits() as f64 / (self.header.width as f64 * self.header.height as f64)
    }
}

fn check_model(model: &ChannelEntropyModel) -> Result<()> {
    if model.channels() != COEFFS {
        return Err(Error::Model(format!("entropy model has {} channels, the codec needs {COEFFS}", model.channels())));
    }
    Ok(())
}

/// Quantize the block-DCT latent at `q_0` and range-code it.
pub fn encode_image(img: &ImageTensor, q0: QuantScale, model: &ChannelEntropyModel) -> Result<Encoded> {
    check_model(model)?;
    model.check_rate(q0.get())?;
    let (width, height) = (u16::try_from(img.width()), u16::try_from(img.height()));
    let (Ok(width), Ok(height)) = (width, height) else {
        return Err(Error::input("image dimensions exceed 65535"));
    };
    let y = analysis_transform(img)?;
    let symbols = symbolize(&y, q0)?;
    let tables = model.tables(q0.get())?;
    let mut enc = RangeEncoder::new();
    for (i, &k) in symbols.data().iter().enumerate() {
        encode_escaped(&mut enc, &tables[i % COEFFS], k)?;
    }
    let payload = enc.finish().into_bytes();
    let payload_len = u32::try_from(payload.len()).map_err(|_| Error::input("payload exceeds 4 GiB"))?;
    let header = BitstreamHeader { q0: q0.get(), width, height, model_id: model.id(), payload_len };
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend_from_slice(&payload);
    Ok(Encoded { header, bytes })
}

/// Parse a bitstream and recover the dequantized latent `ŷ` at `q_0`.
pub fn decode_latent(bytes: &[u8], model: &ChannelEntropyModel) -> Result<(BitstreamHeader, LatentTensor)> {
    check_model(model)?;
    let header = BitstreamHeader::from_bytes(bytes)?;
    if header.model_id != model.id() {
        return Err(Error::Model(format!(
            "bitstream was encoded with entropy model {:016x}, loaded model is {:016x}",
            header.model_id,
            model.id()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len as usize {
        return Err(Error::Decode {
            position: HEADER_LEN + payload.len(),
            reason: format!("payload holds {} bytes, header declares {}", payload.len(), header.payload_len),
        });
    }
    let q0 = QuantScale::new(header.q0)?;
    let tables = model.tables(header.q0)?;
    let shape = header.latent_shape();
    let n = shape[0] * shape[1];
    let mut dec = RangeDecoder::new(payload);
    let mut symbols = Vec::with_capacity(n);
    for i in 0..n {
        symbols.push(decode_escaped(&mut dec, &tables[i % COEFFS])?);
    }
    let y_hat = desymbolize(&SymbolTensor::new(shape.to_vec(), symbols)?, q0)?;
    Ok((header, y_hat))
}

/// Reverse-process settings; the scale comes from the bitstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub steps: usize,
    pub beta: f64,
    pub noise: NoiseForm,
    pub seed: u64,
}

impl DecodeOptions {
    pub fn passthrough() -> Self {
        Self { steps: 0, beta: 0.0, noise: NoiseForm::None, seed: 0 }
    }

    pub fn sampler(&self, q0: QuantScale) -> Result<SamplerConfig> {
        SamplerConfig::new(q0, self.steps, self.beta, self.noise, self.seed)
    }
}

/// Decode a bitstream, run the reverse process on `ŷ` and synthesize the
/// image, clamped to `[0, 1]`. `denoiser` may be `None` only for zero steps.
pub fn decode_image(
    bytes: &[u8],
    model: &ChannelEntropyModel,
    denoiser: Option<&dyn Denoiser>,
    options: &DecodeOptions,
) -> Result<ImageTensor> {
    let (header, y_hat) = decode_latent(bytes, model)?;
    let y = if options.steps == 0 {
        y_hat
    } else {
        let den = denoiser.ok_or_else(|| Error::input("reverse steps requested without a denoiser"))?;
        reverse_sample(&y_hat, &options.sampler(QuantScale::new(header.q0)?)?, den, model)?
    };
    Ok(synthesis_transform(&y, header.width as usize, header.height as usize)?.clamped())
}
