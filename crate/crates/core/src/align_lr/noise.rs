//! Random degradations applied to the auxiliary LR during training.

use std::io::Cursor;

use image::{ImageFormat, ImageReader};
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::io::{from_rgb8, to_rgb8};
use crate::imaging::ImagePlane;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    None,
    Jpeg,
    Gaussian,
    Both,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::None => "none",
            NoiseMode::Jpeg => "jpeg",
            NoiseMode::Gaussian => "gaussian",
            NoiseMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [NoiseMode::None, NoiseMode::Jpeg, NoiseMode::Gaussian, NoiseMode::Both]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise mode {s:?}")))
    }
}

/// Ranges of the per-sample degradation draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    /// Gaussian σ range on the [0, 1] intensity scale.
    pub sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Both,
            sigma: (5.0 / 255.0, 30.0 / 255.0),
            jpeg_quality: (60, 95),
        }
    }
}

/// JPEG encode/decode round trip at `quality` (1..=100), without chroma subsampling.
pub fn jpeg_roundtrip(img: &ImagePlane, quality: u8) -> Result<ImagePlane> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("JPEG quality {quality} outside 1..=100")));
    }
    let rgb = to_rgb8(img)?;
    let (w, h) = rgb.dimensions();
    let (w, h) = (
        u16::try_from(w).map_err(|_| Error::InvalidArgument(format!("image width {w} too large for JPEG")))?,
        u16::try_from(h).map_err(|_| Error::InvalidArgument(format!("image height {h} too large for JPEG")))?,
    );
    let mut buf = Vec::new();
    let mut enc = Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(SamplingFactor::R_4_4_4);
    enc.encode(rgb.as_raw(), w, h, ColorType::Rgb)
        .map_err(|e| Error::Format(format!("JPEG encode: {e}")))?;
    let decoded = ImageReader::with_format(Cursor::new(buf), ImageFormat::Jpeg)
        .decode()
        .map_err(|e| Error::Format(format!("JPEG decode: {e}")))?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`, clipped to [0, 1].
pub fn add_gaussian(img: &ImagePlane, sigma: f64, rng: &mut impl Rng) -> Result<ImagePlane> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    Ok(img.map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)))
}

/// Applies the configured degradation: Gaussian noise, then a JPEG round
/// trip. Both σ and the JPEG quality are always drawn so their values
/// do not depend on the mode.
pub fn inject_noise(img: &ImagePlane, cfg: &NoiseConfig, rng: &mut impl Rng) -> Result<ImagePlane> {
    let sigma = rng.random_range(cfg.sigma.0..=cfg.sigma.1);
    let quality = rng.random_range(cfg.jpeg_quality.0..=cfg.jpeg_quality.1);
    let jpeg = matches!(cfg.mode, NoiseMode::Jpeg | NoiseMode::Both);
    let gauss = matches!(cfg.mode, NoiseMode::Gaussian | NoiseMode::Both);
    let mut out = if gauss { add_gaussian(img, sigma, rng)? } else { img.clone() };
    if jpeg {
        out = jpeg_roundtrip(&out, quality)?;
    }
    Ok(out)
}
