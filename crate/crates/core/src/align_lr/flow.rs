//! Pluggable optical-flow providers and patch-level flow warping.

use std::path::PathBuf;

use log::warn;

use crate::error::{ensure, Error, Result};
use crate::imaging::{backward_warp, resize_bicubic_to, FlowField, ImagePlane};
use crate::sim::read_flow;

/// Inputs of one flow estimate. The result `F` lives on `fixed`'s grid and
/// satisfies `moving(p + F(p)) ≈ fixed(p)`.
#[derive(Clone, Copy, Debug)]
pub struct FlowRequest<'a> {
    pub moving: &'a ImagePlane,
    pub fixed: &'a ImagePlane,
    /// Simulator truth for this exact request, when known.
    pub truth: Option<&'a FlowField>,
    /// Sample identifier, used by file-backed providers.
    pub key: &'a str,
}

pub trait FlowProvider {
    fn name(&self) -> &str;
    fn estimate(&self, req: &FlowRequest) -> Result<FlowField>;
}

fn check_dims(req: &FlowRequest, flow: &FlowField) -> Result<()> {
    ensure!(
        flow.dims() == req.fixed.dims(),
        ShapeMismatch,
        "flow for {} is {:?}, image is {:?}",
        req.key,
        flow.dims(),
        req.fixed.dims()
    );
    Ok(())
}

/// Returns the simulator truth.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleFlow;

impl FlowProvider for OracleFlow {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, req: &FlowRequest) -> Result<FlowField> {
        let f = req
            .truth
            .ok_or_else(|| Error::Flow(format!("no simulator truth for {}", req.key)))?;
        check_dims(req, f)?;
        Ok(f.clone())
    }
}

/// Reads `<dir>/<key>.flow` files in the ZSFLOW01 format.
#[derive(Clone, Debug)]
pub struct ExternalFlow {
    pub dir: PathBuf,
}

impl FlowProvider for ExternalFlow {
    fn name(&self) -> &str {
        "external"
    }

    fn estimate(&self, req: &FlowRequest) -> Result<FlowField> {
        let path = self.dir.join(format!("{}.flow", req.key));
        if !path.is_file() {
            return Err(Error::Flow(format!("no flow file {}", path.display())));
        }
        let f = read_flow(&path)?;
        check_dims(req, &f)?;
        Ok(f)
    }
}

/// Coarse-to-fine block matching on normalized luminance.
#[derive(Clone, Copy, Debug)]
pub struct ClassicalFlow {
    pub levels: usize,
    /// Odd block side.
    pub block: usize,
    /// Search radius per level, in pixels of that level.
    pub radius: usize,
}

impl Default for ClassicalFlow {
    fn default() -> Self {
        Self {
            levels: 3,
            block: 5,
            radius: 4,
        }
    }
}

struct Gray {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Gray {
    /// Zero-mean, unit-variance luminance; `None` if the image is flat.
    fn normalized(img: &ImagePlane) -> Option<Self> {
        let (h, w) = img.dims();
        let c = img.channels();
        let v: Vec<f64> = img.data().chunks_exact(c).map(|p| p.iter().sum::<f64>() / c as f64).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std < 1e-6 {
            return None;
        }
        Some(Self {
            h,
            w,
            v: v.into_iter().map(|x| (x - mean) / std).collect(),
        })
    }

    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

fn median9(mut v: [f64; 9]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[4]
}

fn median_smooth(f: &FlowField) -> FlowField {
    let (h, w) = f.dims();
    FlowField::from_fn(h, w, |y, x| {
        let mut dx = [0.0; 9];
        let mut dy = [0.0; 9];
        for (i, (oy, ox)) in (-1..=1).flat_map(|a| (-1..=1).map(move |b| (a, b))).enumerate() {
            let yy = (y as isize + oy).clamp(0, h as isize - 1) as usize;
            let xx = (x as isize + ox).clamp(0, w as isize - 1) as usize;
            (dx[i], dy[i]) = f.at(yy, xx);
        }
        (median9(dx), median9(dy))
    })
}

impl ClassicalFlow {
    fn match_level(&self, moving: &Gray, fixed: &Gray, prior: &FlowField) -> FlowField {
        let half = (self.block / 2) as isize;
        let r = self.radius as isize;
        let cost = |y: isize, x: isize, dy: isize, dx: isize| -> f64 {
            let mut s = 0.0;
            for oy in -half..=half {
                for ox in -half..=half {
                    s += (fixed.at(y + oy, x + ox) - moving.at(y + oy + dy, x + ox + dx)).abs();
                }
            }
            s
        };
        FlowField::from_fn(fixed.h, fixed.w, |y, x| {
            let (px, py) = prior.at(y, x);
            let (bx, by) = (px.round() as isize, py.round() as isize);
            let (yi, xi) = (y as isize, x as isize);
            let mut best = (f64::INFINITY, 0, 0);
            for dy in -r..=r {
                for dx in -r..=r {
                    // A small pull towards the prior breaks ties in flat areas.
                    let c = cost(yi, xi, by + dy, bx + dx) + 1e-3 * ((dy * dy + dx * dx) as f64).sqrt();
                    if c < best.0 {
                        best = (c, dy, dx);
                    }
                }
            }
            let (c0, dy, dx) = best;
            let (fy, fx) = (by + dy, bx + dx);
            let refine = |cm: f64, cp: f64| {
                let denom = cm + cp - 2.0 * c0;
                if denom > 1e-12 {
                    (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            let sx = if dx.abs() < r {
                refine(cost(yi, xi, fy, fx - 1), cost(yi, xi, fy, fx + 1))
            } else {
                0.0
            };
            let sy = if dy.abs() < r {
                refine(cost(yi, xi, fy - 1, fx), cost(yi, xi, fy + 1, fx))
            } else {
                0.0
            };
            (fx as f64 + sx, fy as f64 + sy)
        })
    }
}

impl FlowProvider for ClassicalFlow {
    fn name(&self) -> &str {
        "classical"
    }

    fn estimate(&self, req: &FlowRequest) -> Result<FlowField> {
        ensure!(
            req.moving.dims() == req.fixed.dims(),
            ShapeMismatch,
            "classical flow needs equal grids"
        );
        let (h, w) = req.fixed.dims();
        if h.min(w) < self.block {
            return Err(Error::Flow(format!("{h}x{w} image is smaller than the {} block", self.block)));
        }
        let (Some(_), Some(_)) = (Gray::normalized(req.moving), Gray::normalized(req.fixed)) else {
            return Err(Error::Flow(format!("{}: textureless image", req.key)));
        };
        let mut levels = 1;
        while levels < self.levels && (h >> levels).min(w >> levels) >= self.block {
            levels += 1;
        }
        let mut flow: Option<FlowField> = None;
        for l in (0..levels).rev() {
            let (lh, lw) = (h >> l, w >> l);
            let pm = resize_bicubic_to(req.moving, lh, lw)?;
            let pf = resize_bicubic_to(req.fixed, lh, lw)?;
            let (Some(gm), Some(gf)) = (Gray::normalized(&pm), Gray::normalized(&pf)) else {
                return Err(Error::Flow(format!("{}: level {l} is textureless", req.key)));
            };
            let prior = match &flow {
                None => FlowField::zeros(lh, lw),
                Some(f) => {
                    let (sy, sx) = (f.height() as f64 / lh as f64, f.width() as f64 / lw as f64);
                    FlowField::from_fn(lh, lw, |y, x| {
                        let (dx, dy) = f.sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5);
                        (dx / sx, dy / sy)
                    })
                }
            };
            flow = Some(median_smooth(&self.match_level(&gm, &gf, &prior)));
        }
        let flow = flow.expect("at least one level");
        if flow.dx.iter().chain(&flow.dy).any(|v| !v.is_finite()) {
            return Err(Error::Flow(format!("{}: non-finite flow", req.key)));
        }
        Ok(flow)
    }
}

/// LR backward-warped toward the GT geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedLr {
    pub image: ImagePlane,
    pub flow: Option<FlowField>,
    /// Set when the provider failed and `image` is the unwarped LR.
    pub warning: Option<String>,
}

/// Estimates GT→LR flow on the LR grid and backward-warps the LR patch.
///
/// The GT is resampled to the LR grid before estimation. Provider failures
/// of kind [`Error::Flow`] leave the LR unwarped and set `warning`.
pub fn patch_flow_align(
    lr: &ImagePlane,
    gt: &ImagePlane,
    provider: &dyn FlowProvider,
    truth: Option<&FlowField>,
    key: &str,
) -> Result<WarpedLr> {
    let (h, w) = lr.dims();
    ensure!(
        gt.height().is_multiple_of(h) && gt.width().is_multiple_of(w) && gt.height() / h == gt.width() / w && gt.height() > h,
        ShapeMismatch,
        "GT {:?} is not an integer upscale of LR {:?}",
        gt.dims(),
        lr.dims()
    );
    let fixed = resize_bicubic_to(gt, h, w)?;
    let req = FlowRequest {
        moving: lr,
        fixed: &fixed,
        truth,
        key,
    };
    match provider.estimate(&req) {
        Ok(flow) => Ok(WarpedLr {
            image: backward_warp(lr, &flow)?,
            flow: Some(flow),
            warning: None,
        }),
        Err(Error::Flow(msg)) => {
            warn!("{key}: flow alignment skipped: {msg}");
            Ok(WarpedLr {
                image: lr.clone(),
                flow: None,
                warning: Some(msg),
            })
        }
        Err(e) => Err(e),
    }
}
