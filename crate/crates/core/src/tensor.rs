//! Dense `channels × frames` feature maps.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub frames: usize,
}

impl Shape {
    pub const fn new(channels: usize, frames: usize) -> Self {
        Self { channels, frames }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.frames
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.channels, self.frames)
    }
}

/// Row-major `channels × frames` matrix. Channel `c` occupies
/// `data[c * frames..(c + 1) * frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Continuous latent `z`, the state space of the diffusion chain.
pub type LatentTensor<T> = Tensor2<T>;

impl<T: Scalar> Tensor2<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_mismatch(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from per-channel rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            shape: Shape::new(rows.len(), frames),
            data,
        })
    }

    /// Standard-normal tensor drawn in row-major order.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn frames(&self) -> usize {
        self.shape.frames
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[T] {
        let f = self.shape.frames;
        &self.data[c * f..(c + 1) * f]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [T] {
        let f = self.shape.frames;
        &mut self.data[c * f..(c + 1) * f]
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize) -> T {
        self.data[c * self.shape.frames + f]
    }

    #[inline]
    pub fn set(&mut self, c: usize, f: usize, v: T) {
        let frames = self.shape.frames;
        self.data[c * frames + f] = v;
    }

    /// Values of one frame (column) across channels.
    pub fn column(&self, f: usize) -> Vec<T> {
        (0..self.shape.channels).map(|c| self.get(c, f)).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(shape_mismatch(shape, self.shape));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_square(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        let s: T = self.data.iter().map(|&v| v * v).sum();
        s / T::of_usize(self.data.len())
    }

    /// Frames `[start, start + len)` of every channel.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.shape.frames {
            return Err(Error::OutOfRange {
                what: "frame",
                index: start + len,
                len: self.shape.frames,
            });
        }
        let mut out = Self::zeros(Shape::new(self.shape.channels, len));
        for c in 0..self.shape.channels {
            out.row_mut(c)
                .copy_from_slice(&self.row(c)[start..start + len]);
        }
        Ok(out)
    }

    /// Stacks `self` above `other` along the channel axis.
    pub fn stack_channels(&self, other: &Self) -> Result<Self> {
        if self.shape.frames != other.shape.frames {
            return Err(shape_mismatch(
                format!("{} frames", self.shape.frames),
                format!("{} frames", other.shape.frames),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            shape: Shape::new(
                self.shape.channels + other.shape.channels,
                self.shape.frames,
            ),
            data,
        })
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor2<U> {
        Tensor2 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
