use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor2};

/// Token embedding aligned to the continuous latent grid, with every frame
/// rescaled to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTensor<T> {
    values: Tensor2<T>,
    /// Original `(min, max)` of each frame before scaling.
    frame_ranges: Vec<(T, T)>,
}

impl<T: Scalar> ConditionTensor<T> {
    /// A zero-channel condition, for unconditional denoisers.
    pub fn empty(frames: usize) -> Self {
        Self {
            values: Tensor2::zeros(Shape::new(0, frames)),
            frame_ranges: vec![(T::zero(), T::zero()); frames],
        }
    }

    pub fn values(&self) -> &Tensor2<T> {
        &self.values
    }

    pub fn shape(&self) -> Shape {
        self.values.shape()
    }

    pub fn channels(&self) -> usize {
        self.values.channels()
    }

    pub fn frames(&self) -> usize {
        self.values.frames()
    }

    pub fn frame_ranges(&self) -> &[(T, T)] {
        &self.frame_ranges
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> crate::Result<Self> {
        Ok(Self {
            values: self.values.slice_frames(start, len)?,
            frame_ranges: self.frame_ranges[start..start + len].to_vec(),
        })
    }
}

/// Maps each frame (column) affinely from its `[min, max]` onto `[-1, 1]`.
/// Constant frames map to all zeros.
pub fn scale_frames<T: Scalar>(raw: &Tensor2<T>) -> ConditionTensor<T> {
    let mut values = raw.clone();
    let mut frame_ranges = Vec::with_capacity(raw.frames());
    let two = T::of(2.0);
    for f in 0..raw.frames() {
        let col = raw.column(f);
        let (lo, hi) = col
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        for (c, &v) in col.iter().enumerate() {
            let scaled = if span > T::zero() {
                (two * (v - lo) / span - T::one())
                    .max(-T::one())
                    .min(T::one())
            } else {
                T::zero()
            };
            values.set(c, f, scaled);
        }
        frame_ranges.push((lo, hi));
    }
    ConditionTensor {
        values,
        frame_ranges,
    }
}
