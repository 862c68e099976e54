//! Full-image and corner-image evaluation against flow-aligned telephoto truth.

use std::fmt::Write as _;

use super::model::{infer, Model};
use crate::align_lr::{FlowProvider, FlowRequest};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::imaging::{backward_warp, psnr_region, resize_bicubic, ssim_region, ImagePlane, Region};
use crate::sim::TrainingPair;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_full: f64,
    pub ssim_full: f64,
    pub psnr_corner: f64,
    pub ssim_corner: f64,
}

/// PSNR/SSIM of `output` against `truth` on the full raster and on the
/// corner region (everything outside the central `1/r_t` window).
pub fn image_metrics(id: &str, output: &ImagePlane, truth: &ImagePlane, r_t: usize) -> Result<ImageMetrics> {
    let corner = Region::Corner { ratio: r_t as f64 };
    Ok(ImageMetrics {
        id: id.to_string(),
        psnr_full: psnr_region(output, truth, Region::Full)?,
        ssim_full: ssim_region(output, truth, Region::Full)?,
        psnr_corner: psnr_region(output, truth, corner)?,
        ssim_corner: ssim_region(output, truth, corner)?,
    })
}

fn mean_of(rows: &[ImageMetrics], id: &str) -> Option<ImageMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some(ImageMetrics {
        id: id.to_string(),
        psnr_full: avg(|r| r.psnr_full),
        ssim_full: avg(|r| r.ssim_full),
        psnr_corner: avg(|r| r.psnr_corner),
        ssim_corner: avg(|r| r.ssim_corner),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Run metadata, echoed into the CSV header.
    pub meta: KeyValues,
    pub rows: Vec<ImageMetrics>,
    /// Bicubic `×r_t` upscale of the LR on the same samples.
    pub baseline: Vec<ImageMetrics>,
    /// `(id, reason)` of samples whose truth alignment failed.
    pub excluded: Vec<(String, String)>,
}

impl EvalReport {
    pub fn mean(&self) -> Option<ImageMetrics> {
        mean_of(&self.rows, "mean")
    }

    pub fn baseline_mean(&self) -> Option<ImageMetrics> {
        mean_of(&self.baseline, "mean")
    }

    fn csv(&self, rows: &[ImageMetrics], title: &str) -> String {
        let mut s = format!("# {title}\n");
        for (k, v) in self.meta.iter() {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str("id,psnr_full,ssim_full,psnr_corner,ssim_corner,lpips\n");
        let mut line = |r: &ImageMetrics| {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},",
                r.id, r.psnr_full, r.ssim_full, r.psnr_corner, r.ssim_corner
            );
        };
        rows.iter().for_each(&mut line);
        if let Some(m) = mean_of(rows, "mean") {
            line(&m);
        }
        let _ = writeln!(s, "# excluded = {}", self.excluded.len());
        for (id, why) in &self.excluded {
            let _ = writeln!(s, "# excluded {id}: {why}");
        }
        s
    }

    /// One row per image, a `mean` summary row and the exclusion count.
    /// The LPIPS column is reserved and left empty.
    pub fn to_csv(&self) -> String {
        self.csv(&self.rows, "zsr evaluation")
    }

    pub fn baseline_csv(&self) -> String {
        self.csv(&self.baseline, "bicubic baseline")
    }
}

/// Infers every pair from `(lr, ref_t, ref_w)`, aligns the GT onto the
/// output with `flow`, and scores the output and the bicubic baseline.
/// Alignment failures exclude the sample and are reported.
pub fn evaluate(model: &Model, pairs: &[TrainingPair], flow: &dyn FlowProvider) -> Result<EvalReport> {
    let r_t = model.cfg.r_t();
    let mut meta = model.cfg.to_kv();
    meta.set("eval_flow", flow.name());
    meta.set("samples", pairs.len().to_string());
    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    let mut excluded = Vec::new();
    for p in pairs {
        let y = infer(model, &p.lr, &p.ref_t, p.ref_w.as_ref())?;
        let key = format!("{}.eval", p.id);
        let req = FlowRequest {
            moving: &p.gt,
            fixed: &y,
            truth: p.eval_flow.as_ref(),
            key: &key,
        };
        let aligned = match flow.estimate(&req) {
            Ok(f) => backward_warp(&p.gt, &f)?,
            Err(Error::Flow(msg)) => {
                excluded.push((p.id.clone(), msg));
                continue;
            }
            Err(e) => return Err(e),
        };
        rows.push(image_metrics(&p.id, &y, &aligned, r_t)?);
        let bic = resize_bicubic(&p.lr, r_t as f64)?;
        baseline.push(image_metrics(&p.id, &bic, &aligned, r_t)?);
    }
    Ok(EvalReport {
        meta,
        rows,
        baseline,
        excluded,
    })
}
