//! Synthetic triple-zoom captures with known ground truth, real-capture
//! loading, and self-supervised training-pair construction.

mod dataset;
mod scene;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use dataset::{load_capture_dir, read_flow, write_capture, write_flow, FLOW_MAGIC};
pub use scene::{laplacian_energy, synth_scene, LAPLACIAN_FLOOR, MIN_SCENE};

use crate::config::{format_list, parse_triple, parse_value, KeyValues};
use crate::error::{ensure, Error, Result};
use crate::imaging::{
    backward_warp, center_crop, center_window, gaussian_blur, resize_bicubic_to, Dihedral, FlowField,
    ImagePlane,
};

/// Degradation and geometry of one simulated capture.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureParams {
    /// Gaussian blur (scene pixels) applied before downsampling.
    pub blur_sigma: f64,
    /// Largest parallax displacement, in ultra-wide pixels.
    pub parallax_amplitude: f64,
    pub color_gain: [f64; 3],
    pub color_bias: [f64; 3],
    /// Standard deviation of additive Gaussian sensor noise.
    pub noise_sigma: f64,
    pub r_w: u32,
    pub r_t: u32,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            parallax_amplitude: 3.0,
            color_gain: [1.0; 3],
            color_bias: [0.0; 3],
            noise_sigma: 10.0 / 255.0,
            r_w: 2,
            r_t: 4,
        }
    }
}

impl CaptureParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.r_t > self.r_w && self.r_w >= 1,
            InvalidArgument,
            "focal ratios need r_t > r_w >= 1, got r_w={} r_t={}",
            self.r_w,
            self.r_t
        );
        ensure!(
            self.blur_sigma >= 0.0 && self.parallax_amplitude >= 0.0,
            InvalidArgument,
            "blur and parallax must be non-negative"
        );
        ensure!(
            (0.0..=1.0).contains(&self.noise_sigma),
            InvalidArgument,
            "noise_sigma must lie in [0, 1]"
        );
        ensure!(
            self.color_gain.iter().all(|g| *g >= 0.0),
            InvalidArgument,
            "color gains must be non-negative"
        );
        Ok(())
    }

    /// Identity color, no blur, parallax or noise.
    pub fn clean(r_w: u32, r_t: u32) -> Self {
        Self {
            blur_sigma: 0.0,
            parallax_amplitude: 0.0,
            color_gain: [1.0; 3],
            color_bias: [0.0; 3],
            noise_sigma: 0.0,
            r_w,
            r_t,
        }
    }

    /// Applies one `key = value` setting; returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "blur_sigma" => self.blur_sigma = parse_value(key, value)?,
            "parallax_amplitude" => self.parallax_amplitude = parse_value(key, value)?,
            "color_gain" => self.color_gain = parse_triple(key, value)?,
            "color_bias" => self.color_bias = parse_triple(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "r_w" => self.r_w = parse_value(key, value)?,
            "r_t" => self.r_t = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("blur_sigma", self.blur_sigma.to_string());
        kv.set("parallax_amplitude", self.parallax_amplitude.to_string());
        kv.set("color_gain", format_list(&self.color_gain));
        kv.set("color_bias", format_list(&self.color_bias));
        kv.set("noise_sigma", self.noise_sigma.to_string());
        kv.set("r_w", self.r_w.to_string());
        kv.set("r_t", self.r_t.to_string());
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut p = Self::default();
        for (k, v) in kv.iter() {
            if !p.set(k, v)? {
                return Err(Error::Config(format!("unknown capture key {k:?}")));
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Dataset-level simulator settings: a base capture plus per-scene color jitter.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub scene_size: usize,
    pub base: CaptureParams,
    /// Per-channel gains are drawn from `base.color_gain · U[1 - j, 1 + j]`.
    pub gain_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene_size: 256,
            base: CaptureParams::default(),
            gain_jitter: 0.1,
        }
    }
}

impl SimConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "scene_size" => self.scene_size = parse_value(key, value)?,
            "gain_jitter" => self.gain_jitter = parse_value(key, value)?,
            _ => return self.base.set(key, value),
        }
        Ok(true)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in kv.iter() {
            if !c.set(k, v)? {
                return Err(Error::Config(format!("unknown simulator key {k:?}")));
            }
        }
        c.base.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.base.to_kv();
        kv.set("scene_size", self.scene_size.to_string());
        kv.set("gain_jitter", self.gain_jitter.to_string());
        kv
    }

    /// Capture parameters for scene `seed`, with jittered color gains.
    pub fn params_for(&self, seed: u64) -> CaptureParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a17_7e55);
        let mut p = self.base.clone();
        if self.gain_jitter > 0.0 {
            for g in &mut p.color_gain {
                *g *= rng.random_range(1.0 - self.gain_jitter..=1.0 + self.gain_jitter);
            }
        }
        p
    }

    /// Scene `seed` rendered and captured.
    pub fn capture(&self, seed: u64) -> Result<ZoomCapture> {
        let scene = synth_scene(seed, self.scene_size, self.scene_size)?;
        let mut c = simulate_capture(&scene, &self.params_for(seed), seed)?;
        c.id = format!("scene_{seed:05}");
        Ok(c)
    }
}

/// Simulator ground truth attached to a capture.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureTruth {
    pub scene: Option<ImagePlane>,
    /// `ultra_wide(p) = clean(p + flow(p))` on the ultra-wide grid.
    pub ultra_flow: FlowField,
    /// Same convention on the wide-angle grid.
    pub wide_flow: FlowField,
    pub params: Option<CaptureParams>,
}

/// One scene's co-captured images. All three share the same pixel
/// dimensions; the wide and tele lenses cover the central `1/r_w` and
/// `1/r_t` of the ultra-wide field of view.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoomCapture {
    pub id: String,
    pub ultra_wide: ImagePlane,
    pub wide: ImagePlane,
    pub tele: ImagePlane,
    pub r_w: u32,
    pub r_t: u32,
    pub truth: Option<CaptureTruth>,
}

/// Smooth random displacement field whose largest vector has length `amplitude`.
pub fn parallax_field(h: usize, w: usize, amplitude: f64, rng: &mut impl Rng) -> FlowField {
    if amplitude == 0.0 {
        return FlowField::zeros(h, w);
    }
    let component = |rng: &mut dyn rand::RngCore| {
        let offset: f64 = rng.random_range(-1.0..1.0);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.3..1.0),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        move |y: usize, x: usize| {
            let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
            offset
                + waves
                    .iter()
                    .map(|(a, ky, kx, ph)| a * (std::f64::consts::TAU * (ky * fy + kx * fx) + ph).sin())
                    .sum::<f64>()
        }
    };
    let fx = component(rng);
    let fy = component(rng);
    let raw = FlowField::from_fn(h, w, |y, x| (fx(y, x), fy(y, x)));
    let m = raw.max_magnitude();
    let s = if m > 0.0 { amplitude / m } else { 0.0 };
    FlowField::from_fn(h, w, |y, x| {
        let (dx, dy) = raw.at(y, x);
        (dx * s, dy * s)
    })
}

fn add_noise(img: &ImagePlane, sigma: f64, rng: &mut impl Rng) -> ImagePlane {
    if sigma == 0.0 {
        return img.clone();
    }
    img.map(|v| (v + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
}

fn color_shift(img: &ImagePlane, gain: [f64; 3], bias: [f64; 3]) -> ImagePlane {
    let (h, w) = img.dims();
    ImagePlane::from_fn(h, w, 3, |y, x, c| (gain[c] * img.get(y, x, c) + bias[c]).clamp(0.0, 1.0))
}

/// The ultra-wide image before parallax, color shift and noise.
pub fn clean_ultra(scene: &ImagePlane, p: &CaptureParams) -> Result<ImagePlane> {
    let r = p.r_t as usize;
    resize_bicubic_to(&gaussian_blur(scene, p.blur_sigma), scene.height() / r, scene.width() / r)
}

/// Renders the three lenses of one scene.
///
/// The wide lens gets an independent parallax field of the same amplitude
/// (in its own pixels), the square root of the color gains, half the bias,
/// and blur scaled by `r_w / r_t`. The tele lens gets a quarter of the noise.
pub fn simulate_capture(scene: &ImagePlane, p: &CaptureParams, seed: u64) -> Result<ZoomCapture> {
    p.validate()?;
    ensure!(scene.channels() == 3, InvalidArgument, "scenes must be RGB");
    let (h, w) = scene.dims();
    let (rt, rw) = (p.r_t as usize, p.r_w as usize);
    ensure!(
        h % rt == 0 && w % rt == 0,
        InvalidArgument,
        "scene {h}x{w} is not divisible by r_t={rt}"
    );
    ensure!(
        h / rt >= 32 && w / rt >= 32,
        InvalidArgument,
        "scene {h}x{w} too small: the tele crop must be at least 32x32"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4_97_0e);
    let (lh, lw) = (h / rt, w / rt);

    let clean = clean_ultra(scene, p)?;
    let ultra_flow = parallax_field(lh, lw, p.parallax_amplitude, &mut rng);
    let ultra = backward_warp(&clean, &ultra_flow)?;
    let ultra = add_noise(&color_shift(&ultra, p.color_gain, p.color_bias), p.noise_sigma, &mut rng);

    let tele = add_noise(&center_crop(scene, p.r_t as f64)?, p.noise_sigma / 4.0, &mut rng);

    let wide_src = center_crop(scene, p.r_w as f64)?;
    let wide_clean = resize_bicubic_to(&gaussian_blur(&wide_src, p.blur_sigma * rw as f64 / rt as f64), lh, lw)?;
    let wide_flow = parallax_field(lh, lw, p.parallax_amplitude, &mut rng);
    let wide = backward_warp(&wide_clean, &wide_flow)?;
    let gain_w = p.color_gain.map(f64::sqrt);
    let bias_w = p.color_bias.map(|b| b / 2.0);
    let wide = add_noise(&color_shift(&wide, gain_w, bias_w), p.noise_sigma, &mut rng);

    Ok(ZoomCapture {
        id: format!("seed_{seed}"),
        ultra_wide: ultra,
        wide,
        tele,
        r_w: p.r_w,
        r_t: p.r_t,
        truth: Some(CaptureTruth {
            scene: Some(scene.clone()),
            ultra_flow,
            wide_flow,
            params: Some(p.clone()),
        }),
    })
}

/// Self-supervised training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    /// Center `1/r_t` of the ultra-wide image.
    pub lr: ImagePlane,
    /// Center `1/r_t` of the tele image.
    pub ref_t: ImagePlane,
    /// Center `1/r_w` of the wide image.
    pub ref_w: Option<ImagePlane>,
    /// The whole tele image.
    pub gt: ImagePlane,
    pub r_w: u32,
    pub r_t: u32,
    /// Oracle flow that backward-warps `lr` onto the geometry of `gt` (LR grid).
    pub align_flow: Option<FlowField>,
    /// Oracle flow that backward-warps `gt` onto the geometry of `lr` (GT grid).
    pub eval_flow: Option<FlowField>,
}

/// Center-crops a capture into (LR, Ref, GT). Truth flows become the oracle
/// alignment flows of the pair.
pub fn make_training_pair(c: &ZoomCapture) -> Result<TrainingPair> {
    let (h, w) = c.ultra_wide.dims();
    let (rt, rw) = (c.r_t as usize, c.r_w as usize);
    ensure!(
        h % rt == 0 && w % rt == 0 && h % rw == 0 && w % rw == 0,
        InvalidArgument,
        "capture {} is {h}x{w}, not divisible by r_t={rt} and r_w={rw}",
        c.id
    );
    ensure!(
        c.tele.dims() == (h, w) && c.wide.dims() == (h, w),
        ShapeMismatch,
        "capture {}: ultra-wide, wide and tele must share pixel dimensions",
        c.id
    );
    let lr = center_crop(&c.ultra_wide, rt as f64)?;
    let ref_t = center_crop(&c.tele, rt as f64)?;
    let ref_w = center_crop(&c.wide, rw as f64)?;
    let (align_flow, eval_flow) = match &c.truth {
        Some(t) => {
            let (top, left, ch, cw) = center_window(h, w, rt as f64)?;
            let inverse = t.ultra_flow.invert(30);
            (
                Some(inverse.crop(top, left, ch, cw)?),
                Some(t.ultra_flow.crop(top, left, ch, cw)?.upscale(rt)),
            )
        }
        None => (None, None),
    };
    Ok(TrainingPair {
        id: c.id.clone(),
        lr,
        ref_t,
        ref_w: Some(ref_w),
        gt: c.tele.clone(),
        r_w: c.r_w,
        r_t: c.r_t,
        align_flow,
        eval_flow,
    })
}

/// Seed of scene `i` in a dataset rendered from base seed `base`.
pub fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(100_000).wrapping_add(i as u64)
}

/// Training pairs of every capture in a dataset directory.
pub fn load_training_pairs(dir: &Path, r_w: u32, r_t: u32) -> Result<Vec<TrainingPair>> {
    let caps = load_capture_dir(dir, r_w, r_t)?;
    ensure!(!caps.is_empty(), InvalidArgument, "no scenes found in {}", dir.display());
    caps.iter().map(make_training_pair).collect()
}

/// Random flip / rotation applied identically to every member of the pair.
pub fn augment(pair: &TrainingPair, seed: u64) -> TrainingPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply_dihedral(pair, Dihedral::from_index(rng.random_range(0..8)))
}

pub fn apply_dihedral(pair: &TrainingPair, d: Dihedral) -> TrainingPair {
    if d == Dihedral::IDENTITY {
        return pair.clone();
    }
    TrainingPair {
        id: pair.id.clone(),
        lr: d.apply_image(&pair.lr),
        ref_t: d.apply_image(&pair.ref_t),
        ref_w: pair.ref_w.as_ref().map(|r| d.apply_image(r)),
        gt: d.apply_image(&pair.gt),
        r_w: pair.r_w,
        r_t: pair.r_t,
        align_flow: pair.align_flow.as_ref().map(|f| d.apply_flow(f)),
        eval_flow: pair.eval_flow.as_ref().map(|f| d.apply_flow(f)),
    }
}
