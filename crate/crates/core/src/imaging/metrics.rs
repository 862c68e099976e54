//! Full-reference fidelity metrics on `[0, 1]` rasters.
//!
//! PSNR uses a peak of 1. SSIM uses the canonical 11-tap Gaussian window
//! (σ = 1.5) with `k1 = 0.01`, `k2 = 0.03`, evaluated over valid window
//! positions and averaged over channels.

use super::geometry::center_window;
use super::plane::ImagePlane;
use crate::error::{ensure, Result};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Which pixels a metric is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Full,
    /// Everything outside the centered `1/ratio` window.
    Corner { ratio: f64 },
}

impl Region {
    fn mask(&self, h: usize, w: usize) -> Result<Vec<bool>> {
        let mut mask = vec![true; h * w];
        if let Region::Corner { ratio } = *self {
            let (top, left, ch, cw) = center_window(h, w, ratio)?;
            for y in top..top + ch {
                for x in left..left + cw {
                    mask[y * w + x] = false;
                }
            }
        }
        Ok(mask)
    }

    /// Number of pixels the region covers on an `h×w` raster.
    pub fn area(&self, h: usize, w: usize) -> Result<usize> {
        Ok(self.mask(h, w)?.into_iter().filter(|&m| m).count())
    }
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    mse_region(a, b, Region::Full)
}

pub fn mse_region(a: &ImagePlane, b: &ImagePlane, region: Region) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let (h, w) = a.dims();
    let c = a.channels();
    let mask = region.mask(h, w)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            for ch in 0..c {
                let d = a.data()[i * c + ch] - b.data()[i * c + ch];
                acc += d * d;
            }
            n += c;
        }
    }
    ensure!(n > 0, InvalidArgument, "metric region is empty");
    Ok(acc / n as f64)
}

/// `10·log10(1/MSE)`; `f64::INFINITY` when the images are identical.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    psnr_region(a, b, Region::Full)
}

pub fn psnr_region(a: &ImagePlane, b: &ImagePlane, region: Region) -> Result<f64> {
    let m = mse_region(a, b, region)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Per-channel SSIM maps over valid window positions, `(oh, ow, maps)`.
fn ssim_maps(a: &ImagePlane, b: &ImagePlane) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    a.check_same_shape(b, "ssim")?;
    let (h, w) = a.dims();
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        InvalidArgument,
        "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
    );
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let plane = |img: &ImagePlane, ch: usize| -> Vec<f64> {
        img.data().iter().skip(ch).step_by(img.channels()).copied().collect()
    };
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut maps = Vec::with_capacity(a.channels());
    for ch in 0..a.channels() {
        let pa = plane(a, ch);
        let pb = plane(b, ch);
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let s_aa = filter_valid(&aa, h, w, &g);
        let s_bb = filter_valid(&bb, h, w, &g);
        let s_ab = filter_valid(&ab, h, w, &g);
        let map = (0..oh * ow)
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = s_aa[i] - ma * ma;
                let vb = s_bb[i] - mb * mb;
                let cov = s_ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .collect();
        maps.push(map);
    }
    Ok((oh, ow, maps))
}

pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    ssim_region(a, b, Region::Full)
}

/// Mean SSIM over windows whose center pixel lies in `region`.
pub fn ssim_region(a: &ImagePlane, b: &ImagePlane, region: Region) -> Result<f64> {
    let (oh, ow, maps) = ssim_maps(a, b)?;
    let (h, w) = a.dims();
    let mask = region.mask(h, w)?;
    let half = SSIM_WINDOW / 2;
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..oh {
        for x in 0..ow {
            if mask[(y + half) * w + x + half] {
                for map in &maps {
                    acc += map[y * ow + x];
                }
                n += maps.len();
            }
        }
    }
    ensure!(n > 0, InvalidArgument, "ssim region holds no complete window");
    Ok(acc / n as f64)
}
