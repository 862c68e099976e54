//! Reference alignment: cosine matching of reference features to the LR
//! anchor, gather-warping of the space-to-depth reference, and pasting of the
//! reference's own footprint at the centre.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::imaging::{gaussian_blur, pixel_unshuffle, resize_bicubic, resize_bicubic_to, FeatureMap, ImagePlane};
use crate::nn::{he_normal, zeros_bias, Graph, Tensor};

#[derive(Clone, Debug)]
struct Layer {
    w: Tensor,
    b: Tensor,
    stride: usize,
    pad: usize,
    pad_end: usize,
}

/// Fixed-seed random convolutional embedder, downsampling by `factor`.
#[derive(Clone, Debug)]
pub struct MatchExtractor {
    layers: Vec<Layer>,
    factor: usize,
    channels: usize,
}

const SLOPE: f64 = 0.2;

impl MatchExtractor {
    /// Three or more 3×3 convolutions; the first `log2(factor)` have stride 2
    /// with the same asymmetric padding as the aux generator.
    pub fn new(seed: u64, channels: usize, factor: u32) -> Result<Self> {
        ensure!(channels > 0, InvalidArgument, "extractor needs channels");
        ensure!(
            factor >= 2 && factor.is_power_of_two() && factor <= 16,
            InvalidArgument,
            "extractor factor must be a power of two in 2..=16, got {factor}"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let down = factor.trailing_zeros() as usize;
        let n = down.max(2) + 1;
        let layers = (0..n)
            .map(|l| {
                let cin = if l == 0 { 3 } else { channels };
                let (stride, pad, pad_end) = match (l < down, l % 2) {
                    (true, 0) => (2, 0, 1),
                    (true, _) => (2, 1, 1),
                    (false, _) => (1, 1, 1),
                };
                Layer {
                    w: he_normal(&mut rng, channels, cin, 3, 1.0),
                    b: zeros_bias(channels),
                    stride,
                    pad,
                    pad_end,
                }
            })
            .collect();
        Ok(Self {
            layers,
            factor: factor as usize,
            channels,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Features of `img` on a grid `factor`× coarser. Hidden layers use a
    /// leaky ReLU; the last is linear and each vector is centred across
    /// channels so unrelated content scores near zero.
    pub fn features(&self, img: &ImagePlane) -> Result<FeatureMap> {
        let (h, w) = img.dims();
        ensure!(
            h % self.factor == 0 && w % self.factor == 0,
            ShapeMismatch,
            "extractor input {h}x{w} not divisible by {}",
            self.factor
        );
        // Reflected context keeps border features comparable between a small
        // reference crop and the same content inside a larger anchor.
        let m = 2 * self.factor;
        let padded = band_pass(&reflect_pad(img, m), self.factor as f64);
        let mut g = Graph::new();
        let mut x = g.input(Tensor::from_image(&padded));
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let wv = g.input(layer.w.clone());
            let bv = g.input(layer.b.clone());
            x = g.conv2d_padded(x, wv, Some(bv), layer.stride, layer.pad, layer.pad_end);
            if l != last {
                x = g.leaky_relu(x, SLOPE);
            }
        }
        let full = g.value(x).to_feature(0);
        let (c, fh, fw) = (full.channels(), h / self.factor, w / self.factor);
        let mut f = FeatureMap::from_fn(c, fh, fw, |ch, y, x| full.get(ch, y + 2, x + 2));
        let hw = fh * fw;
        for q in 0..hw {
            let mean = (0..c).map(|ch| f.data()[ch * hw + q]).sum::<f64>() / c as f64;
            for ch in 0..c {
                f.data_mut()[ch * hw + q] -= mean;
            }
        }
        Ok(f)
    }
}

/// Difference of Gaussians at the matching scale; drops the DC and colour
/// offsets so cosine similarity compares local structure.
fn band_pass(img: &ImagePlane, factor: f64) -> ImagePlane {
    let lo = gaussian_blur(img, BAND.1 * factor);
    let hi = gaussian_blur(img, BAND.0 * factor);
    let d: Vec<f64> = hi.data().iter().zip(lo.data()).map(|(a, b)| a - b).collect();
    ImagePlane::new(img.height(), img.width(), img.channels(), d).expect("same shape")
}

/// Inner and outer DoG sigmas, in units of the matching factor.
const BAND: (f64, f64) = (0.5, 1.5);

fn reflect_pad(img: &ImagePlane, m: usize) -> ImagePlane {
    let (h, w) = img.dims();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    ImagePlane::from_fn(h + 2 * m, w + 2 * m, img.channels(), |y, x, c| {
        img.get(reflect(y as isize - m as isize, h), reflect(x as isize - m as isize, w), c)
    })
}

/// Best-matching reference position for every anchor position.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    pub height: usize,
    pub width: usize,
    pub ref_height: usize,
    pub ref_width: usize,
    /// Raster index into the reference grid, per anchor position.
    pub index: Vec<usize>,
    /// Cosine similarity at the chosen index.
    pub score: Vec<f64>,
    /// Number of similarity evaluations performed.
    pub pairs: u64,
}

impl IndexMap {
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            ref_height: h,
            ref_width: w,
            index: (0..h * w).collect(),
            score: vec![1.0; h * w],
            pairs: 0,
        }
    }

    /// `(y, x)` on the reference grid for anchor position `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (usize, usize) {
        let i = self.index[y * self.width + x];
        (i / self.ref_width, i % self.ref_width)
    }

    pub fn mean_score(&self) -> f64 {
        self.score.iter().sum::<f64>() / self.score.len() as f64
    }
}

fn unit_vectors(f: &FeatureMap) -> Vec<Vec<f64>> {
    let (_, h, w) = f.shape();
    (0..h * w)
        .map(|q| {
            let v = f.vector_at(q / w, q % w);
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                v.into_iter().map(|a| a / n).collect()
            } else {
                v
            }
        })
        .collect()
}

/// Global argmax of cosine similarity. Zero-norm vectors score 0 against
/// everything; ties go to the smallest reference raster index.
pub fn match_index_map(ref_feat: &FeatureMap, lr_feat: &FeatureMap) -> Result<IndexMap> {
    ensure!(
        ref_feat.channels() == lr_feat.channels(),
        ShapeMismatch,
        "reference features have {} channels, anchor features {}",
        ref_feat.channels(),
        lr_feat.channels()
    );
    let r = unit_vectors(ref_feat);
    let a = unit_vectors(lr_feat);
    let mut index = Vec::with_capacity(a.len());
    let mut score = Vec::with_capacity(a.len());
    for av in &a {
        let mut best = (f64::NEG_INFINITY, 0);
        for (j, rv) in r.iter().enumerate() {
            let s: f64 = av.iter().zip(rv).map(|(x, y)| x * y).sum();
            if s > best.0 {
                best = (s, j);
            }
        }
        index.push(best.1);
        score.push(best.0);
    }
    Ok(IndexMap {
        height: lr_feat.height(),
        width: lr_feat.width(),
        ref_height: ref_feat.height(),
        ref_width: ref_feat.width(),
        index,
        score,
        pairs: (a.len() * r.len()) as u64,
    })
}

/// Pure gather: `out(p) = ref_feat(idx(p))`.
pub fn warp_ref(ref_feat: &FeatureMap, idx: &IndexMap) -> Result<FeatureMap> {
    let (c, rh, rw) = ref_feat.shape();
    ensure!(
        (rh, rw) == (idx.ref_height, idx.ref_width),
        ShapeMismatch,
        "index map built for a {}x{} reference, got {rh}x{rw}",
        idx.ref_height,
        idx.ref_width
    );
    ensure!(
        idx.index.iter().all(|&i| i < rh * rw),
        InvalidArgument,
        "index map points outside the reference grid"
    );
    Ok(FeatureMap::from_fn(c, idx.height, idx.width, |ch, y, x| {
        let (ry, rx) = idx.at(y, x);
        ref_feat.get(ch, ry, rx)
    })
    .with_scale(ref_feat.scale))
}

/// Replaces the centred window of `warped` with `patch` (same channels).
pub fn paste_center(warped: &FeatureMap, patch: &FeatureMap) -> Result<FeatureMap> {
    let (c, h, w) = warped.shape();
    let (pc, ph, pw) = patch.shape();
    ensure!(pc == c, ShapeMismatch, "paste has {pc} channels, target {c}");
    ensure!(
        ph <= h && pw <= w,
        ShapeMismatch,
        "centre window {ph}x{pw} exceeds the {h}x{w} feature grid"
    );
    let (top, left) = ((h - ph) / 2, (w - pw) / 2);
    let mut out = warped.clone();
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set(ch, top + y, left + x, patch.get(ch, y, x));
            }
        }
    }
    Ok(out)
}

/// Pastes `pixel_unshuffle(ref_img, r)` into the centre of `warped`.
pub fn center_paste(warped: &FeatureMap, ref_img: &ImagePlane, r: usize) -> Result<FeatureMap> {
    let patch = pixel_unshuffle(&FeatureMap::from_image(ref_img), r)?;
    paste_center(warped, &patch)
}

/// Output of [`align_ref_features`].
#[derive(Clone, Debug)]
pub struct RefAlignment {
    /// `3·r_t²` channels on the anchor (LR) grid.
    pub features: FeatureMap,
    pub index: IndexMap,
    /// Whether the reference footprint was pasted at the centre.
    pub pasted: bool,
}

/// Extract → match → warp → paste.
///
/// `density` is reference pixels per anchor pixel. The reference is resampled
/// to `r_t` pixels per anchor pixel, so its space-to-depth rearrangement lands
/// on the anchor grid. The footprint is pasted only when it is a strict
/// sub-window of the anchor field of view.
pub fn align_ref_features(
    ref_img: &ImagePlane,
    density: f64,
    anchor: &ImagePlane,
    extractor: &MatchExtractor,
) -> Result<RefAlignment> {
    let r = extractor.factor();
    ensure!(
        density.is_finite() && density > 0.0,
        InvalidArgument,
        "reference density must be positive, got {density}"
    );
    let scale = r as f64 / density;
    let ref_r = if (scale - 1.0).abs() < 1e-12 {
        ref_img.clone()
    } else {
        let (h, w) = ref_img.dims();
        resize_bicubic_to(ref_img, (h as f64 * scale).round() as usize, (w as f64 * scale).round() as usize)?
    };
    let (rh, rw) = ref_r.dims();
    ensure!(
        rh % r == 0 && rw % r == 0,
        ShapeMismatch,
        "resampled reference {rh}x{rw} not divisible by {r}"
    );
    let (h, w) = anchor.dims();
    let (fh, fw) = (rh / r, rw / r);
    ensure!(
        fh <= h && fw <= w,
        ShapeMismatch,
        "reference footprint {fh}x{fw} exceeds the {h}x{w} anchor"
    );
    let anchor_up = resize_bicubic(anchor, r as f64)?;
    let fa = extractor.features(&anchor_up)?;
    let fr = extractor.features(&ref_r)?;
    let index = match_index_map(&fr, &fa)?;
    let unshuffled = pixel_unshuffle(&FeatureMap::from_image(&ref_r), r)?;
    let warped = warp_ref(&unshuffled, &index)?;
    let pasted = (fh, fw) != (h, w);
    let features = if pasted {
        paste_center(&warped, &unshuffled)?
    } else {
        warped
    };
    Ok(RefAlignment {
        features,
        index,
        pasted,
    })
}

#[cfg(test)]
mod tests;
