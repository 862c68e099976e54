use super::plane::{bilinear_clamped, FeatureMap, FlowField, ImagePlane};
use crate::error::{ensure, Result};

/// Top-left corner and size of the centered `1/ratio` window of an `h×w` raster.
///
/// Sizes are floored; the window is biased up-left by the flooring remainder.
pub fn center_window(h: usize, w: usize, ratio: f64) -> Result<(usize, usize, usize, usize)> {
    ensure!(
        ratio.is_finite() && ratio >= 1.0,
        InvalidArgument,
        "crop ratio must be >= 1, got {ratio}"
    );
    let ch = (h as f64 / ratio).floor() as usize;
    let cw = (w as f64 / ratio).floor() as usize;
    ensure!(
        ch >= 1 && cw >= 1,
        InvalidArgument,
        "center crop of {h}x{w} by {ratio} is empty"
    );
    Ok(((h - ch) / 2, (w - cw) / 2, ch, cw))
}

/// The centered window of size `floor(H/r) × floor(W/r)`.
pub fn center_crop(img: &ImagePlane, ratio: f64) -> Result<ImagePlane> {
    let (top, left, h, w) = center_window(img.height(), img.width(), ratio)?;
    img.crop(top, left, h, w)
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// One output sample: source indices (already clamped) and normalized weights.
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn resample_taps(src: usize, dst: usize) -> Vec<Taps> {
    let ratio = src as f64 / dst as f64;
    // Downscaling stretches the kernel so it also low-passes.
    let support = ratio.max(1.0);
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for i in lo..=hi {
                let wgt = cubic_kernel((i as f64 - center) / support);
                if wgt != 0.0 {
                    index.push(i.clamp(0, src as isize - 1) as usize);
                    weight.push(wgt);
                }
            }
            let total: f64 = weight.iter().sum();
            for wgt in &mut weight {
                *wgt /= total;
            }
            Taps { index, weight }
        })
        .collect()
}

/// Bicubic resize to `round(H·scale) × round(W·scale)`, clipped to `[0, 1]`.
pub fn resize_bicubic(img: &ImagePlane, scale: f64) -> Result<ImagePlane> {
    ensure!(
        scale.is_finite() && scale > 0.0,
        InvalidArgument,
        "resize scale must be positive, got {scale}"
    );
    let h = (img.height() as f64 * scale).round() as usize;
    let w = (img.width() as f64 * scale).round() as usize;
    resize_bicubic_to(img, h, w)
}

/// Bicubic resize to an explicit size, clipped to `[0, 1]`.
pub fn resize_bicubic_to(img: &ImagePlane, h: usize, w: usize) -> Result<ImagePlane> {
    Ok(resize_bicubic_unclipped(img, h, w)?.clamp01())
}

fn resize_bicubic_unclipped(img: &ImagePlane, h: usize, w: usize) -> Result<ImagePlane> {
    ensure!(
        h >= 1 && w >= 1,
        InvalidArgument,
        "resize output would be empty"
    );
    let c = img.channels();
    let (sh, sw) = img.dims();
    if (h, w) == (sh, sw) {
        return Ok(img.clone());
    }
    let col_taps = resample_taps(sw, w);
    let row_taps = resample_taps(sh, h);

    // Horizontal pass: sh × w
    let mut tmp = vec![0.0; sh * w * c];
    for y in 0..sh {
        for (x, taps) in col_taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wgt) in taps.index.iter().zip(&taps.weight) {
                    acc += wgt * img.get(y, i, ch);
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    // Vertical pass
    let mut out = vec![0.0; h * w * c];
    for (y, taps) in row_taps.iter().enumerate() {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wgt) in taps.index.iter().zip(&taps.weight) {
                    acc += wgt * tmp[(i * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    ImagePlane::new(h, w, c, out)
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> ImagePlane {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = img.dims();
    let c = img.channels();
    let horiz = ImagePlane::from_fn(h, w, c, |y, x, ch| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * img.get_clamped(y as isize, x as isize + k as isize - radius, ch))
            .sum()
    });
    ImagePlane::from_fn(h, w, c, |y, x, ch| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * horiz.get_clamped(y as isize + k as isize - radius, x as isize, ch))
            .sum()
    })
}

/// `out(p) = img(p + flow(p))`, bilinear, sampling clamped to the border.
pub fn backward_warp(img: &ImagePlane, flow: &FlowField) -> Result<ImagePlane> {
    ensure!(
        flow.dims() == img.dims(),
        ShapeMismatch,
        "flow {:?} does not match image {:?}",
        flow.dims(),
        img.dims()
    );
    let (h, w) = img.dims();
    let c = img.channels();
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let mut p = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    p.push(img.get(y, x, ch));
                }
            }
            p
        })
        .collect();
    Ok(ImagePlane::from_fn(h, w, c, |y, x, ch| {
        let (dx, dy) = flow.at(y, x);
        bilinear_clamped(&planes[ch], h, w, y as f64 + dy, x as f64 + dx)
    }))
}

/// Space-to-depth: `(C, H, W) -> (C·r², H/r, W/r)`.
///
/// Output channel `c·r² + i·r + j` holds input `(c, y·r + i, x·r + j)`.
pub fn pixel_unshuffle(f: &FeatureMap, r: usize) -> Result<FeatureMap> {
    let (c, h, w) = f.shape();
    ensure!(r >= 1, InvalidArgument, "shuffle factor must be positive");
    ensure!(
        h % r == 0 && w % r == 0,
        InvalidArgument,
        "spatial dims {h}x{w} not divisible by {r}"
    );
    let (oh, ow) = (h / r, w / r);
    let out = FeatureMap::from_fn(c * r * r, oh, ow, |oc, y, x| {
        let ch = oc / (r * r);
        let i = (oc / r) % r;
        let j = oc % r;
        f.get(ch, y * r + i, x * r + j)
    });
    Ok(out.with_scale(f.scale))
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(f: &FeatureMap, r: usize) -> Result<FeatureMap> {
    let (c, h, w) = f.shape();
    ensure!(r >= 1, InvalidArgument, "shuffle factor must be positive");
    ensure!(
        c % (r * r) == 0,
        InvalidArgument,
        "channel count {c} not divisible by {}",
        r * r
    );
    let out = FeatureMap::from_fn(c / (r * r), h * r, w * r, |ch, y, x| {
        let (i, j) = (y % r, x % r);
        f.get(ch * r * r + i * r + j, y / r, x / r)
    });
    Ok(out.with_scale(f.scale))
}

/// One of the eight flips/rotations of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub transpose: bool,
    pub flip_v: bool,
    pub flip_h: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        transpose: false,
        flip_v: false,
        flip_h: false,
    };

    pub fn from_index(i: u8) -> Self {
        Self {
            transpose: i & 4 != 0,
            flip_v: i & 2 != 0,
            flip_h: i & 1 != 0,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transpose {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinate for output `(y, x)` in an output of size `oh × ow`.
    fn source(&self, y: usize, x: usize, oh: usize, ow: usize) -> (usize, usize) {
        let y = if self.flip_v { oh - 1 - y } else { y };
        let x = if self.flip_h { ow - 1 - x } else { x };
        if self.transpose {
            (x, y)
        } else {
            (y, x)
        }
    }

    pub fn apply_image(&self, img: &ImagePlane) -> ImagePlane {
        let (oh, ow) = self.out_dims(img.height(), img.width());
        ImagePlane::from_fn(oh, ow, img.channels(), |y, x, c| {
            let (sy, sx) = self.source(y, x, oh, ow);
            img.get(sy, sx, c)
        })
    }

    /// Transforms both the sampling grid and the displacement vectors.
    pub fn apply_flow(&self, flow: &FlowField) -> FlowField {
        let (oh, ow) = self.out_dims(flow.height(), flow.width());
        FlowField::from_fn(oh, ow, |y, x| {
            let (sy, sx) = self.source(y, x, oh, ow);
            let (mut dx, mut dy) = flow.at(sy, sx);
            if self.transpose {
                std::mem::swap(&mut dx, &mut dy);
            }
            if self.flip_v {
                dy = -dy;
            }
            if self.flip_h {
                dx = -dx;
            }
            (dx, dy)
        })
    }
}
