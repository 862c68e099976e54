use crate::error::{ensure, Result};
use crate::imaging::{FeatureMap, ImagePlane};

/// A dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], v: f64) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == shape.iter().product::<usize>(),
            ShapeMismatch,
            "tensor {:?} needs {} values, got {}",
            shape,
            shape.iter().product::<usize>(),
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    /// Stacks same-shaped images into an `N×C×H×W` batch.
    pub fn from_images(images: &[&ImagePlane]) -> Result<Self> {
        ensure!(!images.is_empty(), InvalidArgument, "empty image batch");
        let first = images[0];
        let mut data = Vec::with_capacity(images.len() * first.data().len());
        for img in images {
            first.check_same_shape(img, "image batch")?;
            data.extend(img.to_chw());
        }
        Ok(Self {
            shape: [images.len(), first.channels(), first.height(), first.width()],
            data,
        })
    }

    pub fn from_image(img: &ImagePlane) -> Self {
        Self {
            shape: [1, img.channels(), img.height(), img.width()],
            data: img.to_chw(),
        }
    }

    /// Stacks same-shaped feature maps into a batch.
    pub fn from_features(maps: &[&FeatureMap]) -> Result<Self> {
        ensure!(!maps.is_empty(), InvalidArgument, "empty feature batch");
        let (c, h, w) = maps[0].shape();
        let mut data = Vec::with_capacity(maps.len() * c * h * w);
        for m in maps {
            ensure!(
                m.shape() == (c, h, w),
                ShapeMismatch,
                "feature batch mixes {:?} and {:?}",
                (c, h, w),
                m.shape()
            );
            data.extend_from_slice(m.data());
        }
        Ok(Self {
            shape: [maps.len(), c, h, w],
            data,
        })
    }

    /// Sample `n` as an image, clipped to `[0, 1]`.
    pub fn to_image(&self, n: usize) -> ImagePlane {
        let [_, c, h, w] = self.shape;
        let chw: Vec<f64> = self.sample(n).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ImagePlane::from_chw(h, w, c, &chw).expect("finite tensor")
    }

    pub fn to_feature(&self, n: usize) -> FeatureMap {
        let [_, c, h, w] = self.shape;
        FeatureMap::new(c, h, w, self.sample(n).to_vec()).expect("consistent shape")
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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
    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    #[inline]
    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.sample_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        ensure!(
            shape.iter().product::<usize>() == self.data.len(),
            ShapeMismatch,
            "cannot reshape {:?} to {:?}",
            self.shape,
            shape
        );
        self.shape = shape;
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects a subset of samples.
    pub fn select(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }
}
