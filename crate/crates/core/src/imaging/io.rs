use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use super::plane::ImagePlane;
use crate::error::{ensure, Error, Result};

/// Reads an image as 3-channel RGB in `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Writes an RGB PNG, quantizing `[0, 1]` to 8 bits.
pub fn write_png(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb = to_rgb8(img)?;
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &ImagePlane) -> Result<RgbImage> {
    ensure!(
        img.channels() == 3,
        InvalidArgument,
        "8-bit export needs 3 channels, got {}",
        img.channels()
    );
    let (h, w) = img.dims();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        Rgb([
            to_u8(img.get(y, x, 0)),
            to_u8(img.get(y, x, 1)),
            to_u8(img.get(y, x, 2)),
        ])
    }))
}

pub fn from_rgb8(rgb: &RgbImage) -> ImagePlane {
    let (w, h) = rgb.dimensions();
    ImagePlane::from_fn(h as usize, w as usize, 3, |y, x, c| {
        rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}
