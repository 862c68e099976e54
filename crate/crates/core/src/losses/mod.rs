//! Training objectives: pixel ℓ1, global and local sliced Wasserstein losses
//! on perceptual features, and their weighted total.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::imaging::{FeatureMap, ImagePlane};
use crate::nn::{he_normal, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

pub fn l1_loss(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.check_same_shape(b, "l1_loss")?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Random projection directions `M` (`C'×C`, unit-norm rows).
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProjectionMatrix {
    /// Rows drawn uniformly on the unit sphere.
    pub fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row: Vec<f64> = loop {
                let r: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
                if norm(&r) > 1e-12 {
                    break r;
                }
            };
            let n = norm(&row);
            data.extend(row.iter().map(|v| v / n));
        }
        Self { rows, cols, data }
    }

    /// Explicit directions; each row is normalized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), InvalidArgument, "projection needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure!(r.len() == cols, ShapeMismatch, "ragged projection rows");
            let n = norm(r);
            ensure!(n > 0.0, InvalidArgument, "zero projection direction");
            data.extend(r.iter().map(|v| v / n));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Overlapping patch layout over an `h×w` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl PatchLayout {
    /// Square `k×k` patches; requires `stride < k` so neighbours overlap.
    pub fn local(k: usize, stride: usize, h: usize, w: usize) -> Result<Self> {
        ensure!(k >= 1 && stride >= 1, InvalidArgument, "patch size and stride must be positive");
        ensure!(stride < k, InvalidArgument, "stride {stride} must be smaller than patch size {k}");
        ensure!(k <= h.min(w), InvalidArgument, "patch size {k} exceeds feature grid {h}x{w}");
        Ok(Self { kh: k, kw: k, stride })
    }

    /// A single patch spanning the whole grid.
    pub fn global(h: usize, w: usize) -> Self {
        Self { kh: h, kw: w, stride: 1 }
    }

    /// Top-left corners in raster order; trailing rows/columns that do not
    /// fill a patch are not covered.
    pub fn origins(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let ys = (0..=h - self.kh).step_by(self.stride);
        ys.flat_map(|y| (0..=w - self.kw).step_by(self.stride).map(move |x| (y, x)))
            .collect()
    }

    pub fn patch_count(&self, h: usize, w: usize) -> usize {
        self.origins(h, w).len()
    }
}

/// Sliced Wasserstein distance between the patch distributions of two
/// `C×H×W` samples, with the gradient w.r.t. `u` when requested.
///
/// Each patch is projected onto every row of `m`, sorted along the spatial
/// axis, and the sorted sequences are compared by mean absolute difference.
pub fn sliced_w1(
    u: &[f64],
    v: &[f64],
    (c, h, w): (usize, usize, usize),
    m: &ProjectionMatrix,
    layout: PatchLayout,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    assert_eq!(m.cols(), c, "projection width vs channel count");
    let hw = h * w;
    let kk = layout.kh * layout.kw;
    let origins = layout.origins(h, w);
    let total = (origins.len() * m.rows() * kk) as f64;
    let mut grad = want_grad.then(|| vec![0.0; c * hw]);
    // Every direction's projection of the whole map, computed once.
    let project = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m.rows() * hw];
        for r in 0..m.rows() {
            let dst = &mut out[r * hw..(r + 1) * hw];
            for (ch, d) in m.row(r).iter().enumerate() {
                for (o, xv) in dst.iter_mut().zip(&x[ch * hw..(ch + 1) * hw]) {
                    *o += d * xv;
                }
            }
        }
        out
    };
    let (proj_u, proj_v) = (project(u), project(v));
    let mut su: Vec<(f64, usize)> = vec![(0.0, 0); kk];
    let mut pv = vec![0.0; kk];
    let mut acc = 0.0;
    let pixel = |oy: usize, ox: usize, j: usize| (oy + j / layout.kw) * w + ox + j % layout.kw;
    for &(oy, ox) in &origins {
        for r in 0..m.rows() {
            let (qu, qv) = (&proj_u[r * hw..(r + 1) * hw], &proj_v[r * hw..(r + 1) * hw]);
            for j in 0..kk {
                let p = pixel(oy, ox, j);
                su[j] = (qu[p], j);
                pv[j] = qv[p];
            }
            // Index tie-break keeps the unstable sort deterministic.
            su.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            pv.sort_unstable_by(f64::total_cmp);
            let dir = m.row(r);
            for (rank, &(val, j)) in su.iter().enumerate() {
                let d = val - pv[rank];
                acc += d.abs();
                if let Some(g) = grad.as_mut() {
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    } / total;
                    if s != 0.0 {
                        let p = pixel(oy, ox, j);
                        for (ch, dv) in dir.iter().enumerate() {
                            g[ch * hw + p] += s * dv;
                        }
                    }
                }
            }
        }
    }
    (acc / total, grad)
}

fn check_pair(u: &FeatureMap, v: &FeatureMap, m: &ProjectionMatrix) -> Result<()> {
    ensure!(u.shape() == v.shape(), ShapeMismatch, "feature maps {:?} vs {:?}", u.shape(), v.shape());
    ensure!(
        m.cols() == u.channels(),
        ShapeMismatch,
        "projection has {} columns for {} channels",
        m.cols(),
        u.channels()
    );
    Ok(())
}

/// Local overlapped sliced Wasserstein loss between two feature maps.
pub fn losw_loss(u: &FeatureMap, v: &FeatureMap, m: &ProjectionMatrix, k: usize, stride: usize) -> Result<f64> {
    check_pair(u, v, m)?;
    let layout = PatchLayout::local(k, stride, u.height(), u.width())?;
    Ok(sliced_w1(u.data(), v.data(), u.shape(), m, layout, false).0)
}

/// Global sliced Wasserstein loss: one patch covering the whole map.
pub fn sw_loss(u: &FeatureMap, v: &FeatureMap, m: &ProjectionMatrix) -> Result<f64> {
    check_pair(u, v, m)?;
    let layout = PatchLayout::global(u.height(), u.width());
    Ok(sliced_w1(u.data(), v.data(), u.shape(), m, layout, false).0)
}

/// Frozen random convolutional feature pyramid used as the perceptual space.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    store: ParamStore,
    stages: Vec<(ParamId, ParamId, usize)>,
}

impl PerceptualExtractor {
    /// `stages[i] = (channels, stride)`; every conv is 3×3 followed by a leaky ReLU.
    pub fn random(rng: &mut impl Rng, in_channels: usize, stages: &[(usize, usize)]) -> Result<Self> {
        ensure!(!stages.is_empty(), Config, "perceptual pyramid needs at least one stage");
        let mut store = ParamStore::new();
        let mut ids = Vec::new();
        let mut cin = in_channels;
        for (i, &(c, s)) in stages.iter().enumerate() {
            ensure!(c > 0 && s > 0, Config, "perceptual stage {i} has zero width or stride");
            let w = store.add(format!("phi.{i}.w"), ParamGroup::Restoration, he_normal(rng, c, cin, 3, 1.0));
            let b = store.add(format!("phi.{i}.b"), ParamGroup::Restoration, Tensor::zeros([c, 1, 1, 1]));
            ids.push((w, b, s));
            cin = c;
        }
        Ok(Self { store, stages: ids })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.stages.iter().map(|(w, _, _)| self.store.value(*w).n()).collect()
    }

    /// All stage outputs, in order. Weights enter the graph as constants.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut h = x;
        let mut out = Vec::with_capacity(self.stages.len());
        for &(w, b, s) in &self.stages {
            let (w, b) = (g.frozen(&self.store, w), g.frozen(&self.store, b));
            let y = g.conv2d(h, w, Some(b), s, 1);
            h = g.leaky_relu(y, 0.2);
            out.push(h);
        }
        out
    }

    pub fn features(&self, img: &ImagePlane) -> Vec<FeatureMap> {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_image(img));
        self.forward(&mut g, x).into_iter().map(|v| g.value(v).to_feature(0)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArm {
    L1,
    L1Sw,
    L1Losw,
}

impl LossArm {
    pub fn name(self) -> &'static str {
        match self {
            LossArm::L1 => "l1",
            LossArm::L1Sw => "l1+sw",
            LossArm::L1Losw => "l1+losw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [LossArm::L1, LossArm::L1Sw, LossArm::L1Losw]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss arm {s:?} (l1, l1+sw, l1+losw)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub arm: LossArm,
    pub lambda: f64,
    pub patch: usize,
    pub stride: usize,
    /// Projection count per evaluation; `None` uses the channel count.
    pub projections: Option<usize>,
    /// Indices into the perceptual pyramid's stages.
    pub stages: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            arm: LossArm::L1Losw,
            lambda: 0.08,
            patch: 8,
            stride: 4,
            projections: None,
            stages: vec![0, 1, 2],
        }
    }
}

impl LossConfig {
    fn layout(&self, h: usize, w: usize) -> Result<Option<PatchLayout>> {
        Ok(match self.arm {
            LossArm::L1 => None,
            LossArm::L1Sw => Some(PatchLayout::global(h, w)),
            LossArm::L1Losw => {
                // Coarse stages smaller than the patch fall back to one global patch.
                if self.patch > h.min(w) {
                    Some(PatchLayout::global(h, w))
                } else {
                    Some(PatchLayout::local(self.patch, self.stride, h, w)?)
                }
            }
        })
    }

    fn active(&self) -> bool {
        self.arm != LossArm::L1 && self.lambda != 0.0
    }
}

/// Records `ℓ1(ŷ, t) + λ·Σ_stages SW(φ(ŷ), φ(t))` in `g`.
///
/// Fresh projections are drawn from `rng` for every stage; they are shared
/// by the samples of the batch.
pub fn total_loss(
    g: &mut Graph,
    y: Var,
    target: &Tensor,
    phi: &PerceptualExtractor,
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    ensure!(g.value(y).shape() == target.shape(), ShapeMismatch, "output vs target shape");
    let l1 = g.l1(y, target);
    if !cfg.active() {
        return Ok(g.weighted_sum(&[(l1, 1.0)]));
    }
    let fy = phi.forward(g, y);
    let t = g.input(target.clone());
    let ft = phi.forward(g, t);
    let mut terms = vec![(l1, 1.0)];
    for &s in &cfg.stages {
        ensure!(s < fy.len(), Config, "perceptual stage {s} out of range (have {})", fy.len());
        let [n, c, h, w] = g.value(fy[s]).shape();
        let layout = cfg.layout(h, w)?.expect("active arm");
        let m = ProjectionMatrix::random(rng, cfg.projections.unwrap_or(c), c);
        let mut grad = Tensor::zeros([n, c, h, w]);
        let mut value = 0.0;
        for i in 0..n {
            let (val, gr) = sliced_w1(g.value(fy[s]).sample(i), g.value(ft[s]).sample(i), (c, h, w), &m, layout, true);
            value += val / n as f64;
            for (d, v) in grad.sample_mut(i).iter_mut().zip(gr.expect("requested")) {
                *d = v / n as f64;
            }
        }
        let term = g.scalar_loss(fy[s], value, grad);
        terms.push((term, cfg.lambda));
    }
    Ok(g.weighted_sum(&terms))
}

/// Scalar total loss between two images.
pub fn total_loss_value(
    y: &ImagePlane,
    t: &ImagePlane,
    phi: &PerceptualExtractor,
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    y.check_same_shape(t, "total_loss")?;
    let mut g = Graph::new();
    let yv = g.input(Tensor::from_image(y));
    let root = total_loss(&mut g, yv, &Tensor::from_image(t), phi, cfg, rng)?;
    Ok(g.value(root).item())
}

#[cfg(test)]
mod tests;
