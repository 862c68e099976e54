//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use super::kernels::{self, ConvGeom, Mat, Tap, POSITIONAL_CODING};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    MulChannels(Var, Var),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    GlobalAvgPool(Var),
    AffineOffsets(Var, Vec<bool>),
    Deform {
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
    },
    /// Scalar computed eagerly together with its gradient w.r.t. `x`.
    ScalarLoss(Var, Tensor),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    scratch: Vec<f64>,
}

/// Gradients of every node after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter leaf that received one, merged per id.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match out.iter_mut().find(|(pid, _)| *pid == id) {
                    Some((_, acc)) => acc.add_assign(g),
                    None => out.push((id, g.clone())),
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf; never receives gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// A parameter used as a constant (frozen weights).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.input(store.value(id).clone())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        self.conv2d_padded(x, w, b, stride, pad, pad)
    }

    /// Convolution with `pad` zeros before and `pad_end` zeros after each axis.
    pub fn conv2d_padded(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, pad_end: usize) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(xs[1], ws[1], "conv input channels {} vs weight {}", xs[1], ws[1]);
        assert_eq!(ws[2], ws[3], "square kernels only");
        let geom = ConvGeom {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            k: ws[2],
            stride,
            pad,
            pad_end,
        };
        assert!(
            xs[2] + pad + pad_end >= ws[2] && xs[3] + pad + pad_end >= ws[2],
            "kernel larger than input"
        );
        let cout = ws[0];
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = Tensor::zeros([xs[0], cout, oh, ow]);
        let mut scratch = std::mem::take(&mut self.scratch);
        {
            let xv = &self.nodes[x.0].value;
            let wv = self.nodes[w.0].value.data();
            let bv = b.map(|b| self.nodes[b.0].value.data());
            for n in 0..xs[0] {
                kernels::conv_forward(xv.sample(n), wv, bv, cout, &geom, &mut scratch, out.sample_mut(n));
            }
        }
        self.scratch = scratch;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Conv { x, w, b, geom }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        let ng = self.ng(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// `x[n, c, :, :] * s[n, c]` with `s` shaped `[N, C, 1, 1]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Var {
        let xs = self.value(x).shape();
        assert_eq!(self.value(s).shape(), [xs[0], xs[1], 1, 1], "channel scale shape");
        let hw = xs[2] * xs[3];
        let mut out = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        for (plane, &k) in out.data_mut().chunks_exact_mut(hw).zip(&sv) {
            plane.iter_mut().for_each(|v| *v *= k);
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(out, Op::MulChannels(x, s), ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let s0 = self.value(parts[0]).shape();
        let mut ctot = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert!(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3], "concat shape mismatch {s:?} vs {s0:?}");
            ctot += s[1];
        }
        let mut out = Tensor::zeros([s0[0], ctot, s0[2], s0[3]]);
        for n in 0..s0[0] {
            let mut off = 0;
            let dst = out.sample_mut(n);
            for &p in parts {
                let src = self.nodes[p.0].value.sample(n);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let [n, c, h, w] = self.value(x).shape();
        assert!(start + len <= c);
        let hw = h * w;
        let mut out = Tensor::zeros([n, len, h, w]);
        for i in 0..n {
            let src = &self.nodes[x.0].value.sample(i)[start * hw..(start + len) * hw];
            out.sample_mut(i).copy_from_slice(src);
        }
        let ng = self.ng(x);
        self.push(out, Op::SliceChannels(x, start), ng)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let [n, c, h, w] = self.value(x).shape();
        assert_eq!(c % (r * r), 0, "pixel_shuffle channel count");
        let mut out = Tensor::zeros([n, c / (r * r), h * r, w * r]);
        for i in 0..n {
            kernels::shuffle_sample(self.nodes[x.0].value.sample(i), c / (r * r), h * r, w * r, r, out.sample_mut(i));
        }
        let ng = self.ng(x);
        self.push(out, Op::PixelShuffle(x, r), ng)
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Var {
        let [n, c, h, w] = self.value(x).shape();
        assert!(h % r == 0 && w % r == 0, "pixel_unshuffle spatial dims");
        let mut out = Tensor::zeros([n, c * r * r, h / r, w / r]);
        for i in 0..n {
            kernels::unshuffle_sample(self.nodes[x.0].value.sample(i), c, h, w, r, out.sample_mut(i));
        }
        let ng = self.ng(x);
        self.push(out, Op::PixelUnshuffle(x, r), ng)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.value(x).shape();
        let hw = (h * w) as f64;
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        let out = Tensor::from_vec([n, c, 1, 1], data).expect("shape");
        let ng = self.ng(x);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    /// Maps per-pixel affine parameters `[N, 6, H, W]` (A row-major, then b)
    /// to the 9 sampling offsets `[N, 18, H, W]` via `P = A·G + b`.
    ///
    /// Offset channel `2k` is the vertical component of tap `k`, `2k+1` the
    /// horizontal one. Samples with `keep[n] == false` get `P = 0`.
    pub fn affine_offsets(&mut self, theta: Var, keep: &[bool]) -> Var {
        let [n, c, h, w] = self.value(theta).shape();
        assert_eq!(c, 6, "affine head must have 6 channels");
        assert_eq!(keep.len(), n);
        let hw = h * w;
        let mut out = Tensor::zeros([n, 18, h, w]);
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            let t = self.nodes[theta.0].value.sample(i);
            let o = out.sample_mut(i);
            for k in 0..9 {
                let (g0, g1) = (POSITIONAL_CODING[0][k], POSITIONAL_CODING[1][k]);
                for q in 0..hw {
                    let (a00, a01, a10, a11) = (t[q], t[hw + q], t[2 * hw + q], t[3 * hw + q]);
                    let (b0, b1) = (t[4 * hw + q], t[5 * hw + q]);
                    o[2 * k * hw + q] = a00 * g0 + a01 * g1 + b0;
                    o[(2 * k + 1) * hw + q] = a10 * g0 + a11 * g1 + b1;
                }
            }
        }
        let ng = self.ng(theta);
        self.push(out, Op::AffineOffsets(theta, keep.to_vec()), ng)
    }

    /// Deformable 3×3 convolution: `y(q) = Σ_k w_k · x(q + p_k(q)) + b`.
    ///
    /// `w` is `[Cout, Cin, 3, 3]` with tap `k = 3·ky + kx`; out-of-range
    /// samples read zero.
    pub fn deform_conv(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>) -> Var {
        let [n, cin, h, wd] = self.value(x).shape();
        assert_eq!(self.value(offsets).shape(), [n, 18, h, wd], "offset field shape");
        let ws = self.value(w).shape();
        assert_eq!([ws[1], ws[2], ws[3]], [cin, 3, 3], "deform kernel shape");
        let cout = ws[0];
        let hw = h * wd;
        let mut out = Tensor::zeros([n, cout, h, wd]);
        let mut cols = vec![0.0; cin * 9 * hw];
        for i in 0..n {
            let taps = kernels::deform_taps(self.nodes[offsets.0].value.sample(i), h, wd);
            kernels::deform_columns(self.nodes[x.0].value.sample(i), cin, h, wd, &taps, &mut cols);
            let y = out.sample_mut(i);
            gemm_into(self.nodes[w.0].value.data(), cout, cin * 9, &cols, hw, y);
            if let Some(b) = b {
                let bv = self.nodes[b.0].value.data();
                for (o, row) in y.chunks_exact_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
        let ng = self.ng(x) || self.ng(offsets) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Deform { x, offsets, w, b }, ng)
    }

    /// Records a scalar whose gradient w.r.t. `x` was computed eagerly.
    pub fn scalar_loss(&mut self, x: Var, value: f64, grad: Tensor) -> Var {
        assert_eq!(grad.shape(), self.value(x).shape(), "loss gradient shape");
        let ng = self.ng(x);
        self.push(Tensor::scalar(value), Op::ScalarLoss(x, grad), ng)
    }

    /// Mean absolute difference to a constant target.
    pub fn l1(&mut self, x: Var, target: &Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "l1 shape mismatch");
        let n = xv.len() as f64;
        let mut grad = Tensor::zeros(xv.shape());
        let mut acc = 0.0;
        for ((g, a), b) in grad.data_mut().iter_mut().zip(xv.data()).zip(target.data()) {
            let d = a - b;
            acc += d.abs();
            *g = if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
        self.scalar_loss(x, acc / n, grad)
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut acc = 0.0;
        for &(v, c) in terms {
            assert_eq!(self.value(v).len(), 1, "weighted_sum takes scalars");
            acc += c * self.value(v).item();
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();
        let mut scratch = std::mem::take(&mut self.scratch);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop(i, &g, &mut grads, &mut scratch);
            if let Op::Param(id) = self.nodes[i].op {
                params.push((id, i));
            }
            grads[i] = Some(g);
        }
        self.scratch = scratch;
        Gradients { grads, params }
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], scratch: &mut Vec<f64>) {
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv { x, w, b, geom } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let cout = wv.shape()[0];
                let want_x = self.ng(*x);
                let want_w = self.ng(*w);
                let want_b = b.is_some_and(|b| self.ng(b));
                let mut dx = want_x.then(|| Tensor::zeros(xv.shape()));
                let mut dw = want_w.then(|| Tensor::zeros(wv.shape()));
                let mut db = want_b.then(|| Tensor::zeros([cout, 1, 1, 1]));
                for n in 0..xv.n() {
                    kernels::conv_backward(
                        xv.sample(n),
                        wv.data(),
                        g.sample(n),
                        cout,
                        geom,
                        scratch,
                        dx.as_mut().map(|t| t.sample_mut(n)),
                        dw.as_mut().map(|t| t.data_mut()),
                        db.as_mut().map(|t| t.data_mut()),
                    );
                }
                if let Some(dx) = dx {
                    acc(grads, *x, xv.shape()).add_assign(&dx);
                }
                if let Some(dw) = dw {
                    acc(grads, *w, wv.shape()).add_assign(&dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    acc(grads, *b, [cout, 1, 1, 1]).add_assign(&db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        acc(grads, *v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Scale(a, s) => {
                let t = acc(grads, *a, g.shape());
                for (d, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *d += s * gv;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let xv = self.value(*a);
                let t = acc(grads, *a, g.shape());
                for ((d, gv), xv) in t.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *d += if *xv < 0.0 { slope * gv } else { *gv };
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let t = acc(grads, *a, g.shape());
                for ((d, gv), yv) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            Op::MulChannels(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let hw = xv.h() * xv.w();
                if self.ng(*x) {
                    let t = acc(grads, *x, xv.shape());
                    for ((dp, gp), k) in t.data_mut().chunks_exact_mut(hw).zip(g.data().chunks_exact(hw)).zip(sv.data()) {
                        for (d, gv) in dp.iter_mut().zip(gp) {
                            *d += gv * k;
                        }
                    }
                }
                if self.ng(*s) {
                    let t = acc(grads, *s, sv.shape());
                    for ((d, gp), xp) in t.data_mut().iter_mut().zip(g.data().chunks_exact(hw)).zip(xv.data().chunks_exact(hw)) {
                        *d += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Concat(parts) => {
                let n = g.n();
                let mut off = 0;
                for p in parts {
                    let shape = self.value(*p).shape();
                    let len = shape[1] * shape[2] * shape[3];
                    if self.ng(*p) {
                        let t = acc(grads, *p, shape);
                        for s in 0..n {
                            let src = &g.sample(s)[off..off + len];
                            for (d, gv) in t.sample_mut(s).iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    off += len;
                }
            }
            Op::SliceChannels(x, start) => {
                let shape = self.value(*x).shape();
                let hw = shape[2] * shape[3];
                let len = g.c() * hw;
                let t = acc(grads, *x, shape);
                for s in 0..g.n() {
                    let dst = &mut t.sample_mut(s)[start * hw..start * hw + len];
                    for (d, gv) in dst.iter_mut().zip(g.sample(s)) {
                        *d += gv;
                    }
                }
            }
            Op::PixelShuffle(x, r) => {
                let shape = self.value(*x).shape();
                let mut buf = vec![0.0; g.sample_len()];
                let t = acc(grads, *x, shape);
                for s in 0..g.n() {
                    kernels::unshuffle_sample(g.sample(s), g.c(), g.h(), g.w(), *r, &mut buf);
                    for (d, gv) in t.sample_mut(s).iter_mut().zip(&buf) {
                        *d += gv;
                    }
                }
            }
            Op::PixelUnshuffle(x, r) => {
                let shape = self.value(*x).shape();
                let mut buf = vec![0.0; g.sample_len()];
                let t = acc(grads, *x, shape);
                for s in 0..g.n() {
                    kernels::shuffle_sample(g.sample(s), shape[1], shape[2], shape[3], *r, &mut buf);
                    for (d, gv) in t.sample_mut(s).iter_mut().zip(&buf) {
                        *d += gv;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape();
                let hw = shape[2] * shape[3];
                let t = acc(grads, *x, shape);
                for (dp, gv) in t.data_mut().chunks_exact_mut(hw).zip(g.data()) {
                    dp.iter_mut().for_each(|d| *d += gv / hw as f64);
                }
            }
            Op::AffineOffsets(theta, keep) => {
                let shape = self.value(*theta).shape();
                let hw = shape[2] * shape[3];
                let t = acc(grads, *theta, shape);
                for (s, &kept) in keep.iter().enumerate() {
                    if !kept {
                        continue;
                    }
                    let gs = g.sample(s);
                    let d = t.sample_mut(s);
                    for k in 0..9 {
                        let (g0, g1) = (POSITIONAL_CODING[0][k], POSITIONAL_CODING[1][k]);
                        for q in 0..hw {
                            let gy = gs[2 * k * hw + q];
                            let gx = gs[(2 * k + 1) * hw + q];
                            d[q] += gy * g0;
                            d[hw + q] += gy * g1;
                            d[4 * hw + q] += gy;
                            d[2 * hw + q] += gx * g0;
                            d[3 * hw + q] += gx * g1;
                            d[5 * hw + q] += gx;
                        }
                    }
                }
            }
            Op::Deform { x, offsets, w, b } => {
                self.deform_backward(*x, *offsets, *w, *b, g, grads);
            }
            Op::ScalarLoss(x, lg) => {
                let scale = g.item();
                let t = acc(grads, *x, lg.shape());
                for (d, gv) in t.data_mut().iter_mut().zip(lg.data()) {
                    *d += scale * gv;
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if self.ng(v) {
                        let t = acc(grads, v, [1, 1, 1, 1]);
                        t.data_mut()[0] += c * g.item();
                    }
                }
            }
        }
    }

    fn deform_backward(&self, x: Var, offsets: Var, w: Var, b: Option<Var>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = self.value(x);
        let ov = self.value(offsets);
        let wv = self.value(w);
        let [n, cin, h, wd] = xv.shape();
        let cout = wv.shape()[0];
        let hw = h * wd;
        let kk = cin * 9;
        let mut dx = self.ng(x).then(|| Tensor::zeros(xv.shape()));
        let mut doff = self.ng(offsets).then(|| Tensor::zeros(ov.shape()));
        let mut dw = self.ng(w).then(|| Tensor::zeros(wv.shape()));
        let mut cols = vec![0.0; kk * hw];
        let mut dcols = vec![0.0; kk * hw];
        for s in 0..n {
            let taps: Vec<Tap> = kernels::deform_taps(ov.sample(s), h, wd);
            let gs = g.sample(s);
            if let Some(dw) = dw.as_mut() {
                kernels::deform_columns(xv.sample(s), cin, h, wd, &taps, &mut cols);
                kernels::gemm(Mat::new(gs, cout, hw), Mat::new(&cols, kk, hw).t(), dw.data_mut(), 1.0);
            }
            if dx.is_none() && doff.is_none() {
                continue;
            }
            kernels::gemm(Mat::new(wv.data(), cout, kk).t(), Mat::new(gs, cout, hw), &mut dcols, 0.0);
            let xs = xv.sample(s);
            for c in 0..cin {
                let plane = &xs[c * hw..(c + 1) * hw];
                for k in 0..9 {
                    let row = &dcols[(c * 9 + k) * hw..(c * 9 + k + 1) * hw];
                    let kt = &taps[k * hw..(k + 1) * hw];
                    if let Some(dx) = dx.as_mut() {
                        let dplane = &mut dx.sample_mut(s)[c * hw..(c + 1) * hw];
                        for (gv, t) in row.iter().zip(kt) {
                            t.scatter(*gv, dplane, h, wd);
                        }
                    }
                    if let Some(doff) = doff.as_mut() {
                        let d = doff.sample_mut(s);
                        for (q, (gv, t)) in row.iter().zip(kt).enumerate() {
                            let (py, px) = t.position_grad(plane, h, wd);
                            d[2 * k * hw + q] += gv * py;
                            d[(2 * k + 1) * hw + q] += gv * px;
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            grads[x.0].get_or_insert_with(|| Tensor::zeros(xv.shape())).add_assign(&dx);
        }
        if let Some(doff) = doff {
            grads[offsets.0].get_or_insert_with(|| Tensor::zeros(ov.shape())).add_assign(&doff);
        }
        if let Some(dw) = dw {
            grads[w.0].get_or_insert_with(|| Tensor::zeros(wv.shape())).add_assign(&dw);
        }
        if let Some(b) = b.filter(|b| self.ng(*b)) {
            let t = grads[b.0].get_or_insert_with(|| Tensor::zeros([cout, 1, 1, 1]));
            for s in 0..n {
                for (o, row) in g.sample(s).chunks_exact(hw).enumerate() {
                    t.data_mut()[o] += row.iter().sum::<f64>();
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, shape: [usize; 4]) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn gemm_into(w: &[f64], m: usize, k: usize, cols: &[f64], n: usize, out: &mut [f64]) {
    kernels::gemm(Mat::new(w, m, k), Mat::new(cols, k, n), out, 0.0);
}
