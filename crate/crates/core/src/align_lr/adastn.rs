//! Stacked AdaSTN stages: affine-parameterized deformable convolutions whose
//! offsets come from the warped-LR and auxiliary-LR features.

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::imaging::{FeatureMap, ImagePlane};
use crate::nn::{he_normal, zeros_bias, zeros_weight, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

const SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    Train,
    Test,
}

#[derive(Clone, Debug)]
struct Stage {
    est1: (ParamId, ParamId),
    est2: (ParamId, ParamId),
    deform: (ParamId, ParamId),
}

/// LR feature head followed by the AdaSTN stages.
#[derive(Clone, Debug)]
pub struct AdaStn {
    head: (ParamId, ParamId),
    aux_head: (ParamId, ParamId),
    stages: Vec<Stage>,
    channels: usize,
    /// Per-stage, per-sample probability of replacing the offsets with zero.
    pub zero_prob: f64,
}

/// How the offsets of one forward pass are produced.
#[derive(Clone, Copy, Debug)]
pub enum Offsets<'a> {
    /// Every stage runs with `P = 0`; the estimators are never read.
    Zero,
    /// Offsets estimated from the auxiliary LR; `keep[stage][n] == false`
    /// forces `P = 0` for sample `n` at that stage.
    Guided { aux: Var, keep: &'a [Vec<bool>] },
}

impl AdaStn {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, channels: usize, stages: usize, zero_prob: f64) -> Result<Self> {
        ensure!(channels > 0 && stages > 0, InvalidArgument, "AdaSTN needs channels and stages");
        ensure!(
            (0.0..=1.0).contains(&zero_prob),
            InvalidArgument,
            "zero probability {zero_prob} outside [0, 1]"
        );
        let la = ParamGroup::LrAlignment;
        let oe = ParamGroup::OffsetEstimator;
        let c = channels;
        let head = (
            store.add("adastn.head.w", la, he_normal(rng, c, 3, 3, 1.0)),
            store.add("adastn.head.b", la, zeros_bias(c)),
        );
        let aux_head = (
            store.add("adastn.aux_head.w", oe, he_normal(rng, c, 3, 3, 1.0)),
            store.add("adastn.aux_head.b", oe, zeros_bias(c)),
        );
        let stages = (0..stages)
            .map(|s| Stage {
                est1: (
                    store.add(format!("adastn.s{s}.est1.w"), oe, he_normal(rng, c, 2 * c, 3, 1.0)),
                    store.add(format!("adastn.s{s}.est1.b"), oe, zeros_bias(c)),
                ),
                est2: (
                    store.add(format!("adastn.s{s}.est2.w"), oe, zeros_weight(6, c, 3)),
                    store.add(format!("adastn.s{s}.est2.b"), oe, zeros_bias(6)),
                ),
                deform: (
                    store.add(format!("adastn.s{s}.deform.w"), la, he_normal(rng, c, c, 3, 1.0)),
                    store.add(format!("adastn.s{s}.deform.b"), la, zeros_bias(c)),
                ),
            })
            .collect();
        Ok(Self {
            head,
            aux_head,
            stages,
            channels,
            zero_prob,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Independent per-stage, per-sample keep flags (`false` with probability `zero_prob`).
    pub fn draw_keep(&self, batch: usize, rng: &mut impl Rng) -> Vec<Vec<bool>> {
        (0..self.stages.len())
            .map(|_| (0..batch).map(|_| !rng.random_bool(self.zero_prob)).collect())
            .collect()
    }

    /// Affine parameters `[N, 6, H, W]` of stage `s` from the current and auxiliary features.
    fn estimate(&self, g: &mut Graph, store: &ParamStore, s: usize, x: Var, aux_feat: Var) -> Var {
        let st = &self.stages[s];
        let cat = g.concat(&[x, aux_feat]);
        let w1 = g.param(store, st.est1.0);
        let b1 = g.param(store, st.est1.1);
        let h = g.conv2d(cat, w1, Some(b1), 1, 1);
        let h = g.leaky_relu(h, SLOPE);
        let w2 = g.param(store, st.est2.0);
        let b2 = g.param(store, st.est2.1);
        g.conv2d(h, w2, Some(b2), 1, 1)
    }

    /// `lr` is `[N, 3, H, W]`; returns features `[N, C, H, W]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, lr: Var, offsets: Offsets) -> Result<Var> {
        let [n, c, h, w] = g.value(lr).shape();
        ensure!(c == 3, ShapeMismatch, "AdaSTN input must have 3 channels, got {c}");
        let hw_ = g.param(store, self.head.0);
        let hb = g.param(store, self.head.1);
        let x0 = g.conv2d(lr, hw_, Some(hb), 1, 1);
        let mut x = g.leaky_relu(x0, SLOPE);
        let aux_feat = match offsets {
            Offsets::Zero => None,
            Offsets::Guided { aux, keep } => {
                let s = g.value(aux).shape();
                ensure!(s == [n, 3, h, w], ShapeMismatch, "aux LR {s:?} vs LR {:?}", [n, 3, h, w]);
                ensure!(
                    keep.len() == self.stages.len() && keep.iter().all(|k| k.len() == n),
                    ShapeMismatch,
                    "keep mask must be {} stages x {n} samples",
                    self.stages.len()
                );
                let aw = g.param(store, self.aux_head.0);
                let ab = g.param(store, self.aux_head.1);
                let a = g.conv2d(aux, aw, Some(ab), 1, 1);
                Some((g.leaky_relu(a, SLOPE), keep))
            }
        };
        for s in 0..self.stages.len() {
            let p = match aux_feat {
                None => g.input(Tensor::zeros([n, 18, h, w])),
                Some((af, keep)) => {
                    let theta = self.estimate(g, store, s, x, af);
                    g.affine_offsets(theta, &keep[s])
                }
            };
            let dw = g.param(store, self.stages[s].deform.0);
            let db = g.param(store, self.stages[s].deform.1);
            let y = g.deform_conv(x, p, dw, Some(db));
            x = g.leaky_relu(y, SLOPE);
        }
        Ok(x)
    }
}

/// Image-level entry point. Train mode requires the auxiliary LR and draws
/// the zeroing masks from `rng`; test mode rejects it and runs with `P = 0`.
pub fn align_lr_features(
    net: &AdaStn,
    store: &ParamStore,
    warped_lr: &ImagePlane,
    aux_lr: Option<&ImagePlane>,
    mode: AlignMode,
    rng: &mut impl Rng,
) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let lr = g.input(Tensor::from_image(warped_lr));
    let out = match (mode, aux_lr) {
        (AlignMode::Test, Some(_)) => {
            return Err(Error::InvalidArgument(
                "auxiliary LR is not available at test time".into(),
            ))
        }
        (AlignMode::Train, None) => {
            return Err(Error::InvalidArgument("train-mode alignment needs the auxiliary LR".into()))
        }
        (AlignMode::Test, None) => net.forward(&mut g, store, lr, Offsets::Zero)?,
        (AlignMode::Train, Some(aux)) => {
            let keep = net.draw_keep(1, rng);
            let a = g.input(Tensor::from_image(aux));
            net.forward(&mut g, store, lr, Offsets::Guided { aux: a, keep: &keep })?
        }
    };
    Ok(g.value(out).to_feature(0))
}
