//! Raw numeric kernels behind the graph ops. Everything here works on
//! one sample at a time over flat CHW slices.

/// Offsets of the 3×3 neighborhood, vertical row first then horizontal.
pub const POSITIONAL_CODING: [[f64; 9]; 2] = [
    [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
    [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0],
];

/// Row-major matrix view: `(data, rows, cols, transposed)`.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of a stored `rows × cols` matrix.
    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            transposed: !self.transposed,
            data: self.data,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out`, with `out` row-major `a.rows × b.cols`.
pub fn gemm(a: Mat, b: Mat, out: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n);
    assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: bounds checked above; strides describe dense row-major storage
    // (or its transpose) of exactly the asserted sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel convolution, possibly padded asymmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    /// Zero padding before the first row/column.
    pub pad: usize,
    /// Zero padding after the last row/column.
    pub pad_end: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + self.pad + self.pad_end - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + self.pad + self.pad_end - self.k) / self.stride + 1
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.pad_end == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside a row of width `w`.
#[inline]
fn valid_cols(ow: usize, w: usize, s: usize, kx: usize, pad: usize) -> (usize, usize) {
    // ix = ox·s + kx − pad must lie in [0, w).
    let lo = pad.saturating_sub(kx).div_ceil(s);
    let hi = if w + pad > kx { ((w + pad - kx - 1) / s + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds `x` (`cin×h×w`) into `(cin·k·k) × (oh·ow)` columns, zero padded.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let (k, s, pad) = (g.k, g.stride, g.pad);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(ow, g.w, s, kx, pad);
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let x0 = lo * s + kx - pad;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[x0..x0 + (hi - lo)]);
                    } else {
                        for (i, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[x0 + i * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let (k, s, pad) = (g.k, g.stride, g.pad);
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(ow, g.w, s, kx, pad);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let x0 = lo * s + kx - pad;
                    let srow = &src[oy * ow + lo..oy * ow + hi];
                    if s == 1 {
                        for (d, v) in line[x0..x0 + (hi - lo)].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (i, v) in srow.iter().enumerate() {
                            line[x0 + i * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// One-sample convolution: `y = W·cols(x) + b`.
pub fn conv_forward(x: &[f64], weight: &[f64], bias: Option<&[f64]>, cout: usize, g: &ConvGeom, scratch: &mut Vec<f64>, y: &mut [f64]) {
    let p = g.out_h() * g.out_w();
    let kk = g.col_rows();
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else {
        scratch.resize(kk * p, 0.0);
        im2col(x, g, scratch);
        scratch
    };
    gemm(Mat::new(weight, cout, kk), Mat::new(cols, kk, p), y, 0.0);
    if let Some(b) = bias {
        for (o, row) in y.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v += b[o]);
        }
    }
}

/// One-sample convolution backward. Accumulates into the provided gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    cout: usize,
    g: &ConvGeom,
    scratch: &mut Vec<f64>,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let p = g.out_h() * g.out_w();
    let kk = g.col_rows();
    if let Some(db) = db {
        for (o, row) in dy.chunks_exact(p).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        let cols: &[f64] = if g.is_pointwise() {
            x
        } else {
            scratch.resize(kk * p, 0.0);
            im2col(x, g, scratch);
            scratch
        };
        gemm(Mat::new(dy, cout, p), Mat::new(cols, kk, p).t(), dw, 1.0);
    }
    if let Some(dx) = dx {
        if g.is_pointwise() {
            gemm(Mat::new(weight, cout, kk).t(), Mat::new(dy, cout, p), dx, 1.0);
        } else {
            scratch.resize(kk * p, 0.0);
            gemm(Mat::new(weight, cout, kk).t(), Mat::new(dy, cout, p), scratch, 0.0);
            col2im(scratch, g, dx);
        }
    }
}

/// Bilinear tap of one sampling location; corners outside the plane read zero.
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    y0: isize,
    x0: isize,
    fy: f64,
    fx: f64,
}

impl Tap {
    #[inline]
    pub fn new(y: f64, x: f64) -> Self {
        let yf = y.floor();
        let xf = x.floor();
        Self {
            y0: yf as isize,
            x0: xf as isize,
            fy: y - yf,
            fx: x - xf,
        }
    }

    #[inline]
    fn read(plane: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    }

    #[inline]
    fn corners(&self, plane: &[f64], h: usize, w: usize) -> [f64; 4] {
        [
            Self::read(plane, h, w, self.y0, self.x0),
            Self::read(plane, h, w, self.y0, self.x0 + 1),
            Self::read(plane, h, w, self.y0 + 1, self.x0),
            Self::read(plane, h, w, self.y0 + 1, self.x0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (fy, fx) = (self.fy, self.fx);
        [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ]
    }

    #[inline]
    pub fn sample(&self, plane: &[f64], h: usize, w: usize) -> f64 {
        let v = self.corners(plane, h, w);
        let wt = self.weights();
        v[0] * wt[0] + v[1] * wt[1] + v[2] * wt[2] + v[3] * wt[3]
    }

    /// Scatters `g` into `dplane` with the bilinear weights.
    #[inline]
    pub fn scatter(&self, g: f64, dplane: &mut [f64], h: usize, w: usize) {
        let wt = self.weights();
        let spots = [
            (self.y0, self.x0),
            (self.y0, self.x0 + 1),
            (self.y0 + 1, self.x0),
            (self.y0 + 1, self.x0 + 1),
        ];
        for ((y, x), wgt) in spots.into_iter().zip(wt) {
            if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
                dplane[y as usize * w + x as usize] += g * wgt;
            }
        }
    }

    /// Derivatives of the sample w.r.t. the vertical and horizontal position.
    #[inline]
    pub fn position_grad(&self, plane: &[f64], h: usize, w: usize) -> (f64, f64) {
        let v = self.corners(plane, h, w);
        let (fy, fx) = (self.fy, self.fx);
        let dy = (v[2] - v[0]) * (1.0 - fx) + (v[3] - v[1]) * fx;
        let dx = (v[1] - v[0]) * (1.0 - fy) + (v[3] - v[2]) * fy;
        (dy, dx)
    }
}

/// Sampling taps of a 9-point deformable kernel, indexed `[k * hw + q]`.
pub fn deform_taps(offsets: &[f64], h: usize, w: usize) -> Vec<Tap> {
    let hw = h * w;
    let mut taps = Vec::with_capacity(9 * hw);
    for k in 0..9 {
        let oy = &offsets[2 * k * hw..(2 * k + 1) * hw];
        let ox = &offsets[(2 * k + 1) * hw..(2 * k + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let q = y * w + x;
                taps.push(Tap::new(y as f64 + oy[q], x as f64 + ox[q]));
            }
        }
    }
    taps
}

/// Gathers the `(cin·9) × hw` sampled columns of one sample.
pub fn deform_columns(x: &[f64], cin: usize, h: usize, w: usize, taps: &[Tap], cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for k in 0..9 {
            let row = &mut cols[(c * 9 + k) * hw..(c * 9 + k + 1) * hw];
            let kt = &taps[k * hw..(k + 1) * hw];
            for (v, t) in row.iter_mut().zip(kt) {
                *v = t.sample(plane, h, w);
            }
        }
    }
}

/// Index of element `(c, y, x)` in the space-to-depth rearrangement.
#[inline]
pub fn unshuffle_index(c: usize, y: usize, x: usize, r: usize, oh: usize, ow: usize) -> usize {
    let oc = c * r * r + (y % r) * r + (x % r);
    (oc * oh + y / r) * ow + x / r
}

/// Space-to-depth of one `c×h×w` sample.
pub fn unshuffle_sample(x: &[f64], c: usize, h: usize, w: usize, r: usize, out: &mut [f64]) {
    let (oh, ow) = (h / r, w / r);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[unshuffle_index(ch, y, xx, r, oh, ow)] = x[(ch * h + y) * w + xx];
            }
        }
    }
}

/// Depth-to-space of one sample whose *output* is `c×h×w`.
pub fn shuffle_sample(x: &[f64], c: usize, h: usize, w: usize, r: usize, out: &mut [f64]) {
    let (oh, ow) = (h / r, w / r);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * h + y) * w + xx] = x[unshuffle_index(ch, y, xx, r, oh, ow)];
            }
        }
    }
}
