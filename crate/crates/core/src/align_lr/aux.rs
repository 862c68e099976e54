//! Auxiliary-LR generator: GT degraded onto the LR grid by centroid-constrained
//! convolutions under spatially uniform guidance from the warped LR.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Result};
use crate::nn::{he_normal, zeros_bias, zeros_weight, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Centroid offsets `(|Σ(i−k/2+0.5)w|, |Σ(j−k/2+0.5)w|)` summed, averaged over
/// the `(out, in)` pairs of a `[Cout, Cin, k, k]` kernel, with its gradient.
pub fn position_preserving_loss(weight: &Tensor) -> Result<(f64, Tensor)> {
    let [cout, cin, kh, kw] = weight.shape();
    ensure!(kh == kw, InvalidArgument, "kernel must be square, got {kh}x{kw}");
    ensure!(kh % 2 == 1, InvalidArgument, "kernel size must be odd, got {kh}");
    let k = kh;
    let coord = |i: usize| i as f64 - k as f64 / 2.0 + 0.5;
    let pairs = (cout * cin) as f64;
    let mut grad = Tensor::zeros(weight.shape());
    let mut total = 0.0;
    for (w, g) in weight.data().chunks_exact(k * k).zip(grad.data_mut().chunks_exact_mut(k * k)) {
        let (mut sy, mut sx) = (0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                sy += coord(i) * w[i * k + j];
                sx += coord(j) * w[i * k + j];
            }
        }
        total += sy.abs() + sx.abs();
        let (gy, gx) = (sign(sy), sign(sx));
        for i in 0..k {
            for j in 0..k {
                g[i * k + j] = (gy * coord(i) + gx * coord(j)) / pairs;
            }
        }
    }
    Ok((total / pairs, grad))
}

#[derive(Clone, Debug)]
struct Stage {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
    pad_end: usize,
    cout: usize,
}

/// Strided generator plus the guidance head that scales each stage's channels.
#[derive(Clone, Debug)]
pub struct AuxGenerator {
    stages: Vec<Stage>,
    guide_conv: (ParamId, ParamId),
    guide_fc1: (ParamId, ParamId),
    guide_fc2: (ParamId, ParamId),
    width: usize,
}

/// Output of [`AuxGenerator::forward`] with the kernel nodes the objective needs.
#[derive(Clone, Debug)]
pub struct AuxForward {
    pub out: Var,
    pub kernels: Vec<Var>,
}

const SLOPE: f64 = 0.2;

impl AuxGenerator {
    /// Near-identity initialization: centered delta kernels that route input
    /// channel `i % 3` through the hidden channels, plus Gaussian noise of
    /// std `init_noise`. Stride-2 stages pad asymmetrically so the sampling
    /// centre stays within half a GT pixel of the LR pixel centre.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        width: usize,
        r_t: u32,
        init_noise: f64,
    ) -> Result<Self> {
        ensure!(width >= 3, InvalidArgument, "aux generator width must be >= 3, got {width}");
        ensure!(
            r_t >= 2 && r_t.is_power_of_two() && r_t <= 16,
            InvalidArgument,
            "aux generator needs a power-of-two r_t in 2..=16, got {r_t}"
        );
        let down = r_t.trailing_zeros() as usize;
        let n_stages = down.max(4) + 1;
        let noise = Normal::new(0.0, init_noise.max(0.0)).expect("finite std");
        let group = ParamGroup::AuxGenerator;
        let mut stages = Vec::with_capacity(n_stages);
        for l in 0..n_stages {
            let cin = if l == 0 { 3 } else { width };
            let cout = if l == n_stages - 1 { 3 } else { width };
            let mut w = zeros_weight(cout, cin, 3);
            let center = |o: usize, i: usize| (o * cin + i) * 9 + 4;
            if l == 0 {
                for o in 0..cout {
                    w.data_mut()[center(o, o % 3)] = 1.0;
                }
            } else if l == n_stages - 1 {
                for i in 0..cin {
                    let members = (0..cin).filter(|j| j % 3 == i % 3).count() as f64;
                    w.data_mut()[center(i % 3, i)] = 1.0 / members;
                }
            } else {
                for o in 0..cout {
                    w.data_mut()[center(o, o)] = 1.0;
                }
            }
            if init_noise > 0.0 {
                w.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
            }
            let (stride, pad, pad_end) = if l < down {
                if l % 2 == 0 {
                    (2, 0, 1)
                } else {
                    (2, 1, 1)
                }
            } else {
                (1, 1, 1)
            };
            stages.push(Stage {
                w: store.add(format!("aux.conv{l}.w"), group, w),
                b: store.add(format!("aux.conv{l}.b"), group, zeros_bias(cout)),
                stride,
                pad,
                pad_end,
                cout,
            });
        }
        let total: usize = stages.iter().map(|s| s.cout).sum();
        let guide_conv = (
            store.add("aux.guide.conv.w", group, he_normal(rng, width, 3, 3, 1.0)),
            store.add("aux.guide.conv.b", group, zeros_bias(width)),
        );
        let guide_fc1 = (
            store.add("aux.guide.fc1.w", group, he_normal(rng, width, width, 1, 1.0)),
            store.add("aux.guide.fc1.b", group, zeros_bias(width)),
        );
        let guide_fc2 = (
            store.add("aux.guide.fc2.w", group, zeros_weight(total, width, 1)),
            store.add("aux.guide.fc2.b", group, zeros_bias(total)),
        );
        Ok(Self {
            stages,
            guide_conv,
            guide_fc1,
            guide_fc2,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Kernel parameter ids, one per stage.
    pub fn kernel_ids(&self) -> Vec<ParamId> {
        self.stages.iter().map(|s| s.w).collect()
    }

    /// Per-stage channel scales `2·sigmoid(·)` in `(0, 2)`, shaped `[N, ΣC, 1, 1]`.
    fn guidance(&self, g: &mut Graph, store: &ParamStore, warped: Var) -> Var {
        let cw = g.param(store, self.guide_conv.0);
        let cb = g.param(store, self.guide_conv.1);
        let h = g.conv2d(warped, cw, Some(cb), 1, 1);
        let h = g.leaky_relu(h, SLOPE);
        let h = g.global_avg_pool(h);
        let w1 = g.param(store, self.guide_fc1.0);
        let b1 = g.param(store, self.guide_fc1.1);
        let h = g.conv2d(h, w1, Some(b1), 1, 0);
        let h = g.leaky_relu(h, SLOPE);
        let w2 = g.param(store, self.guide_fc2.0);
        let b2 = g.param(store, self.guide_fc2.1);
        let h = g.conv2d(h, w2, Some(b2), 1, 0);
        let s = g.sigmoid(h);
        g.scale(s, 2.0)
    }

    /// `gt` is `[N, 3, r_t·h, r_t·w]`, `warped` is `[N, 3, h, w]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, gt: Var, warped: Var) -> Result<AuxForward> {
        let gs = g.value(gt).shape();
        let ws = g.value(warped).shape();
        let r = 1usize << self.stages.iter().filter(|s| s.stride == 2).count();
        ensure!(
            gs[0] == ws[0] && gs[1] == 3 && ws[1] == 3 && gs[2] == ws[2] * r && gs[3] == ws[3] * r,
            ShapeMismatch,
            "aux generator expects GT at {r}x the warped LR, got {gs:?} and {ws:?}"
        );
        let scales = self.guidance(g, store, warped);
        let mut x = gt;
        let mut kernels = Vec::with_capacity(self.stages.len());
        let mut offset = 0;
        let last = self.stages.len() - 1;
        for (l, st) in self.stages.iter().enumerate() {
            let w = g.param(store, st.w);
            let b = g.param(store, st.b);
            kernels.push(w);
            x = g.conv2d_padded(x, w, Some(b), st.stride, st.pad, st.pad_end);
            let s = g.slice_channels(scales, offset, st.cout);
            offset += st.cout;
            x = g.mul_channels(x, s);
            if l != last {
                x = g.leaky_relu(x, SLOPE);
            }
        }
        Ok(AuxForward { out: x, kernels })
    }

    /// `‖out − warped‖₁ + λ_p · Σ_l PPL(W^l)` as a graph node.
    pub fn objective(&self, g: &mut Graph, fwd: &AuxForward, warped: &Tensor, lambda_p: f64) -> Result<Var> {
        ensure!(
            g.value(fwd.out).shape() == warped.shape(),
            ShapeMismatch,
            "aux output {:?} vs warped LR {:?}",
            g.value(fwd.out).shape(),
            warped.shape()
        );
        let mut terms = vec![(g.l1(fwd.out, warped), 1.0)];
        if lambda_p != 0.0 {
            for &k in &fwd.kernels {
                let (v, grad) = position_preserving_loss(g.value(k))?;
                terms.push((g.scalar_loss(k, v, grad), lambda_p));
            }
        }
        Ok(g.weighted_sum(&terms))
    }
}
