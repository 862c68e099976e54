use crate::error::{ensure, Error, Result};

/// An H×W×C raster of intensities in `[0, 1]`, stored interleaved (HWC).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            height >= 1 && width >= 1 && channels >= 1,
            InvalidArgument,
            "image dims must be positive, got {height}x{width}x{channels}"
        );
        ensure!(
            data.len() == height * width * channels,
            ShapeMismatch,
            "buffer holds {} values, expected {}",
            data.len(),
            height * width * channels
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "image contains non-finite values"
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1);
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1);
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Builds an image from a planar CHW buffer.
    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f64]) -> Result<Self> {
        ensure!(
            chw.len() == height * width * channels,
            ShapeMismatch,
            "planar buffer holds {} values, expected {}",
            chw.len(),
            height * width * channels
        );
        let plane = height * width;
        let img = Self::from_fn(height, width, channels, |y, x, c| chw[c * plane + y * width + x]);
        ensure!(
            img.data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "image contains non-finite values"
        );
        Ok(img)
    }

    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Reads `(y, x)` with coordinates clamped to the raster.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Copies the window `[top, top+h) × [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImagePlane> {
        ensure!(
            h >= 1 && w >= 1 && top + h <= self.height && left + w <= self.width,
            InvalidArgument,
            "crop {h}x{w}@({top},{left}) outside {}x{}",
            self.height,
            self.width
        );
        Ok(Self::from_fn(h, w, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        }))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImagePlane {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(mut self) -> ImagePlane {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = (self.height * self.width) as f64;
        self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n
    }

    pub fn channel_std(&self, c: usize) -> f64 {
        let mean = self.channel_mean(c);
        let n = (self.height * self.width) as f64;
        let var = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    pub fn flip_horizontal(&self) -> ImagePlane {
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }
}

/// A C×H×W activation tensor living on a grid `scale`× the LR grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    pub scale: u32,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            channels >= 1 && height >= 1 && width >= 1,
            InvalidArgument,
            "feature dims must be positive, got {channels}x{height}x{width}"
        );
        ensure!(
            data.len() == channels * height * width,
            ShapeMismatch,
            "feature buffer holds {} values, expected {}",
            data.len(),
            channels * height * width
        );
        Ok(Self {
            channels,
            height,
            width,
            scale: 1,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            scale: 1,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            scale: 1,
            data,
        }
    }

    pub fn from_image(img: &ImagePlane) -> Self {
        Self {
            channels: img.channels(),
            height: img.height(),
            width: img.width(),
            scale: 1,
            data: img.to_chw(),
        }
    }

    pub fn with_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// The channel vector at one spatial position.
    pub fn vector_at(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        ensure!(
            height >= 1 && width >= 1,
            InvalidArgument,
            "flow dims must be positive"
        );
        ensure!(
            dx.len() == height * width && dy.len() == height * width,
            ShapeMismatch,
            "flow planes must hold {} values",
            height * width
        );
        ensure!(
            dx.iter().chain(dy.iter()).all(|v| v.is_finite()),
            InvalidArgument,
            "flow contains non-finite values"
        );
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut dx = Vec::with_capacity(height * width);
        let mut dy = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                dx.push(a);
                dy.push(b);
            }
        }
        Self {
            height,
            width,
            dx,
            dy,
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(dx, dy)` at a pixel.
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Bilinear lookup with clamp-to-edge.
    pub fn sample(&self, y: f64, x: f64) -> (f64, f64) {
        (
            bilinear_clamped(&self.dx, self.height, self.width, y, x),
            bilinear_clamped(&self.dy, self.height, self.width, y, x),
        )
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.dx.len() as f64;
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .sum::<f64>()
            / n
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<FlowField> {
        ensure!(
            top + h <= self.height && left + w <= self.width && h >= 1 && w >= 1,
            InvalidArgument,
            "flow crop outside field"
        );
        Ok(Self::from_fn(h, w, |y, x| self.at(top + y, left + x)))
    }

    /// Resamples the field onto a grid `factor`× finer, scaling the vectors by `factor`.
    pub fn upscale(&self, factor: usize) -> FlowField {
        let h = self.height * factor;
        let w = self.width * factor;
        let f = factor as f64;
        Self::from_fn(h, w, |y, x| {
            let sy = (y as f64 + 0.5) / f - 0.5;
            let sx = (x as f64 + 0.5) / f - 0.5;
            let (dx, dy) = self.sample(sy, sx);
            (dx * f, dy * f)
        })
    }

    /// The field `g` with `g(q) = -f(q + g(q))`, i.e. the displacement that undoes `self`.
    pub fn invert(&self, iterations: usize) -> FlowField {
        let mut inv = self.clone();
        for v in inv.dx.iter_mut().chain(inv.dy.iter_mut()) {
            *v = -*v;
        }
        for _ in 0..iterations {
            let prev = inv.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    let (gx, gy) = prev.at(y, x);
                    let (fx, fy) = self.sample(y as f64 + gy, x as f64 + gx);
                    let i = y * self.width + x;
                    inv.dx[i] = -fx;
                    inv.dy[i] = -fy;
                }
            }
        }
        inv
    }
}

/// Bilinear sample of a single H×W plane at `(y, x)` with clamp-to-edge.
#[inline]
pub(crate) fn bilinear_clamped(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}
