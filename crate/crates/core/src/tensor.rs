//! Dense row-major `f64` tensors and the feature-map newtypes built on them.

use crate::error::{Error, Result};

/// A dense, row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data, new shape with an equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    /// Contiguous slice of the leading axis, `[start, end)`.
    pub fn slice_outer(&self, start: usize, end: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        }
    }

    /// Concatenate along the leading axis.
    pub fn concat_outer(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "concat mismatch {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Tensor { shape, data })
    }
}

/// Feature tensor laid out as `[channels][orientations][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedFeatureMap(Tensor);

impl OrientedFeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::Shape(format!(
                "oriented feature map must be rank 4, got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("oriented feature map".into()));
        }
        Ok(Self(tensor))
    }

    pub fn zeros(channels: usize, orientations: usize, height: usize, width: usize) -> Self {
        Self(Tensor::zeros(&[channels, orientations, height, width]))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }
    pub fn orientations(&self) -> usize {
        self.0.shape()[1]
    }
    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }
    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Feature tensor laid out as `[channels][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatFeatureMap(Tensor);

impl FlatFeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::Shape(format!(
                "flat feature map must be rank 3, got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("flat feature map".into()));
        }
        Ok(Self(tensor))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// RGB image as `[3][height][width]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 3 || tensor.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "image must be [3][H][W], got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self(tensor))
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        Self(Tensor::from_fn(&[3, height, width], |i| rgb[i / plane]))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.0
    }
    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }
}
