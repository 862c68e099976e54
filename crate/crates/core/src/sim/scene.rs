//! Procedural high-resolution scenes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{ensure, Result};
use crate::imaging::ImagePlane;

/// Lower bound on [`laplacian_energy`] that every generated scene satisfies.
pub const LAPLACIAN_FLOOR: f64 = 0.02;

/// Minimum scene side length.
pub const MIN_SCENE: usize = 64;

type Rgb = [f64; 3];

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random_range(0.12..0.82), rng.random_range(0.12..0.82), rng.random_range(0.12..0.82)]
}

/// Coverage of a shape whose signed distance (pixels, negative inside) is `d`.
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { cy: f64, cx: f64, hh: f64, hw: f64, angle: f64 },
    Stroke { y0: f64, x0: f64, y1: f64, x1: f64, half: f64 },
}

impl Shape {
    fn distance(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Disc { cy, cx, r } => ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r,
            Shape::Rect { cy, cx, hh, hw, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let (qx, qy) = (u.abs() - hw, v.abs() - hh);
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                outside + qx.max(qy).min(0.0)
            }
            Shape::Stroke { y0, x0, y1, x1, half } => {
                let (vy, vx) = (y1 - y0, x1 - x0);
                let len2 = (vy * vy + vx * vx).max(1e-12);
                let t = (((y - y0) * vy + (x - x0) * vx) / len2).clamp(0.0, 1.0);
                ((y - y0 - t * vy).powi(2) + (x - x0 - t * vx).powi(2)).sqrt() - half
            }
        }
    }
}

enum Fill {
    Flat(Rgb),
    Stripes { a: Rgb, b: Rgb, period: f64, angle: f64 },
    Checker { a: Rgb, b: Rgb, cell: f64 },
}

impl Fill {
    fn color(&self, y: f64, x: f64) -> Rgb {
        match *self {
            Fill::Flat(c) => c,
            Fill::Stripes { a, b, period, angle } => {
                let t = (x * angle.cos() + y * angle.sin()) / period;
                let m = 0.5 + 0.5 * (std::f64::consts::TAU * t).sin();
                mix(a, b, m)
            }
            Fill::Checker { a, b, cell } => {
                let parity = ((y / cell).floor() + (x / cell).floor()).rem_euclid(2.0);
                if parity < 1.0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Deterministic scene with gradients, textured patches, shapes and
/// glyph-like strokes.
pub fn synth_scene(seed: u64, height: usize, width: usize) -> Result<ImagePlane> {
    ensure!(
        height >= MIN_SCENE && width >= MIN_SCENE,
        InvalidArgument,
        "scene must be at least {MIN_SCENE}x{MIN_SCENE}, got {height}x{width}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5ce);
    let (h, w) = (height as f64, width as f64);
    let scale = h.min(w) / 256.0;

    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let grad_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let wave_f = rng.random_range(1.0..3.0) / h.max(w);
    let wave_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut layers: Vec<(Shape, Fill)> = Vec::new();
    let n_patches = rng.random_range(3..6);
    for _ in 0..n_patches {
        let shape = Shape::Rect {
            cy: rng.random_range(0.0..h),
            cx: rng.random_range(0.0..w),
            hh: rng.random_range(20.0..60.0) * scale,
            hw: rng.random_range(20.0..60.0) * scale,
            angle: rng.random_range(0.0..std::f64::consts::PI),
        };
        let (a, b) = (random_color(&mut rng), random_color(&mut rng));
        let fill = if rng.random_bool(0.5) {
            Fill::Stripes {
                a,
                b,
                period: rng.random_range(8.0..18.0) * scale.max(0.5),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        } else {
            Fill::Checker {
                a,
                b,
                cell: rng.random_range(6.0..14.0) * scale.max(0.5),
            }
        };
        layers.push((shape, fill));
    }
    let n_shapes = rng.random_range(6..11);
    for _ in 0..n_shapes {
        let shape = if rng.random_bool(0.5) {
            Shape::Disc {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(6.0..30.0) * scale,
            }
        } else {
            Shape::Rect {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                hh: rng.random_range(5.0..25.0) * scale,
                hw: rng.random_range(5.0..25.0) * scale,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        };
        layers.push((shape, Fill::Flat(random_color(&mut rng))));
    }
    // Glyph-like strokes: short polylines in a dark ink.
    let n_glyphs = rng.random_range(5..10);
    for _ in 0..n_glyphs {
        let ink = [rng.random_range(0.1..0.3), rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)];
        let (mut y, mut x) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
        let half = rng.random_range(0.8..1.6) * scale.max(0.6);
        for _ in 0..rng.random_range(2..5) {
            let len = rng.random_range(6.0..18.0) * scale.max(0.5);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (ny, nx) = (y + len * ang.sin(), x + len * ang.cos());
            layers.push((Shape::Stroke { y0: y, x0: x, y1: ny, x1: nx, half }, Fill::Flat(ink)));
            (y, x) = (ny, nx);
        }
    }

    let img = ImagePlane::from_fn(height, width, 3, |_, _, _| 0.0);
    let mut data = img.into_data();
    for yi in 0..height {
        for xi in 0..width {
            let (y, x) = (yi as f64 + 0.5, xi as f64 + 0.5);
            let t = ((x * grad_angle.cos() + y * grad_angle.sin()) / h.max(w)).rem_euclid(1.0);
            let wave = 0.08 * (std::f64::consts::TAU * wave_f * (x + 0.7 * y) + wave_phase).sin();
            let mut px = mix(c0, c1, t).map(|v| v + wave);
            for (shape, fill) in &layers {
                let a = coverage(shape.distance(y, x));
                if a > 0.0 {
                    px = mix(px, fill.color(y, x), a);
                }
            }
            let o = (yi * width + xi) * 3;
            for c in 0..3 {
                data[o + c] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    ImagePlane::new(height, width, 3, data)
}

/// Mean of the top quartile of |∇²| over the luminance of `img`.
pub fn laplacian_energy(img: &ImagePlane) -> f64 {
    let (h, w) = img.dims();
    let lum = |y: isize, x: isize| -> f64 {
        (0..img.channels()).map(|c| img.get_clamped(y, x, c)).sum::<f64>() / img.channels() as f64
    };
    let mut mags: Vec<f64> = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let l = lum(y - 1, x) + lum(y + 1, x) + lum(y, x - 1) + lum(y, x + 1) - 4.0 * lum(y, x);
            mags.push(l.abs());
        }
    }
    mags.sort_by(f64::total_cmp);
    let top = &mags[mags.len() * 3 / 4..];
    top.iter().sum::<f64>() / top.len() as f64
}
