//! Dense rank-3 tensors in row-major `(height, width, channels)` order.
//!
//! The same type holds images (stimulus, reconstruction, residual) and
//! activation maps, where the channel axis indexes dictionary features.
//! Samples are `f32`; every reduction accumulates in `f64`.

use std::fmt;

use crate::error::{MdcaError, Result};

/// Spatial and channel extent of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds a tensor from raw samples, rejecting zero dimensions, length
    /// mismatches and non-finite values.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        if shape.is_empty() {
            return Err(MdcaError::ShapeMismatch(format!(
                "tensor dimensions must be positive, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(MdcaError::ShapeMismatch(format!(
                "{} samples supplied for shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MdcaError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::zeros_like_shape(Shape::new(height, width, channels))
    }

    pub fn zeros_like_shape(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self {
            shape: Shape::new(height, width, channels),
            data,
        }
    }

    /// Internal constructor for data produced by trusted kernels.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.shape.width + j) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f32 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f32) {
        let idx = self.index(i, j, c);
        self.data[idx] = v;
    }

    /// Samples at spatial position `(i, j)` across all channels.
    pub fn pixel(&self, i: usize, j: usize) -> &[f32] {
        let start = self.index(i, j, 0);
        &self.data[start..start + self.shape.channels]
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(MdcaError::ShapeMismatch(format!(
                "{op}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "subtract")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += *b);
        Ok(())
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64).abs()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn mean_sq(&self) -> f64 {
        self.sq_norm() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// Mirror the tensor top-to-bottom.
    pub fn flip_vertical(&self) -> Self {
        let Shape {
            height, width, ..
        } = self.shape;
        let row = width * self.shape.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for i in (0..height).rev() {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        Self {
            shape: self.shape,
            data,
        }
    }

    /// Per-channel sum over all spatial positions.
    pub fn channel_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.shape.channels];
        for px in self.data.chunks_exact(self.shape.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        sums
    }
}
