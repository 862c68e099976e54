//! Static report artifacts: SVG loss curves and bar charts, PNG crop montages.

use std::fmt::Write as _;

use super::train::StepLog;
use crate::error::{ensure, Result};
use crate::imaging::ImagePlane;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Trailing moving average; entry `i` averages `values[i+1-window ..= i]`
/// and is defined from `i = window - 1` on.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() + 1 - window);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..values.len() {
        acc += values[i] - values[i - window];
        out.push(acc / window as f64);
    }
    out
}

/// Means of consecutive non-overlapping blocks of `window` values.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, y_lo: f64, y_hi: f64, x_label: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - 16.0, H - MARGIN, 32.0);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            y + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

/// Raw loss (light) and its moving average (dark) against the step index.
pub fn loss_curve_svg(trace: &[StepLog], window: usize) -> Result<String> {
    ensure!(!trace.is_empty(), InvalidArgument, "empty loss trace");
    let losses: Vec<f64> = trace.iter().map(|l| l.loss).collect();
    let (lo, hi) = range(losses.iter().copied()).ok_or_else(|| {
        crate::Error::InvalidArgument("loss trace has no finite values".into())
    })?;
    let mut s = header("training loss");
    axes(&mut s, lo, hi, "step");
    let n = trace.len().max(2) as f64 - 1.0;
    let (x0, x1, y0, y1) = (MARGIN, W - 16.0, H - MARGIN, 32.0);
    let px = |i: usize| x0 + (x1 - x0) * i as f64 / n;
    let py = |v: f64| y0 - (y0 - y1) * (v - lo) / (hi - lo);
    let poly = |pts: Vec<(f64, f64)>| {
        pts.iter()
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let raw: Vec<_> = losses.iter().enumerate().map(|(i, &v)| (px(i), py(v))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#9bbbe0" stroke-width="1"/>"##, poly(raw));
    let w = window.clamp(1, trace.len());
    let ma: Vec<_> = moving_average(&losses, w)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (px(i + w - 1), py(v)))
        .collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f4e8c" stroke-width="2"/>"##, poly(ma));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Vertical bars in the given order, labelled with name and value.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)], unit: &str) -> Result<String> {
    ensure!(!bars.is_empty(), InvalidArgument, "no bars to draw");
    let (mut lo, hi) = range(bars.iter().map(|b| b.1))
        .ok_or_else(|| crate::Error::InvalidArgument("bar values are not finite".into()))?;
    // Start the axis below the smallest bar so differences stay visible.
    lo -= (hi - lo).max(1e-3) * 0.5;
    let mut s = header(title);
    axes(&mut s, lo, hi, unit);
    let (x0, x1, y0, y1) = (MARGIN, W - 16.0, H - MARGIN, 32.0);
    let slot = (x1 - x0) / bars.len() as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let top = y0 - (y0 - y1) * (v - lo) / (hi - lo);
        let x = x0 + slot * (i as f64 + 0.15);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#3a78b8"/>"##,
            slot * 0.7,
            (y0 - top).max(0.0)
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            top - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Nearest-neighbour upscale by an integer factor.
pub fn upscale_nearest(img: &ImagePlane, r: usize) -> ImagePlane {
    let (h, w) = img.dims();
    ImagePlane::from_fn(h * r, w * r, img.channels(), |y, x, c| img.get(y / r, x / r, c))
}

/// Side-by-side crops of equally sized panels at identical coordinates,
/// separated by a white gutter of `gutter` pixels.
pub fn crop_montage(panels: &[&ImagePlane], top: usize, left: usize, size: usize, gutter: usize) -> Result<ImagePlane> {
    ensure!(!panels.is_empty(), InvalidArgument, "montage needs panels");
    let dims = panels[0].dims();
    for p in panels {
        ensure!(
            p.dims() == dims && p.channels() == 3,
            ShapeMismatch,
            "montage panels must share dims: {:?} vs {dims:?}",
            p.dims()
        );
    }
    let crops = panels
        .iter()
        .map(|p| p.crop(top, left, size, size))
        .collect::<Result<Vec<_>>>()?;
    let n = crops.len();
    let width = n * size + (n - 1) * gutter;
    Ok(ImagePlane::from_fn(size, width, 3, |y, x, c| {
        let (i, off) = (x / (size + gutter), x % (size + gutter));
        if off < size {
            crops[i].get(y, off, c)
        } else {
            1.0
        }
    }))
}
