//! 1-D convolution primitives with hand-written backward passes.
//!
//! Weights are flat slices. A convolution stores `[out][in][kernel]`, a
//! transposed convolution stores `[in][out][kernel]`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor2};

/// Geometry of a 1-D (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Left zero padding for a convolution; left crop for a transposed one.
    pub pad: usize,
}

impl ConvGeom {
    /// Stride-1 convolution whose output has as many frames as its input.
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad: (kernel - 1) / 2,
        }
    }

    /// Strided layer with `frames_out = frames_in / stride` (convolution) or
    /// `frames_out = frames_in * stride` (transposed). Requires `kernel >= stride`.
    pub fn strided(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        debug_assert!(kernel >= stride);
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: (kernel - stride) / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel
    }

    /// Weights plus biases.
    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    /// Fan-in used for uniform initialization.
    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel
    }
}

/// Frames `f` in `[lo, hi)` with `0 <= f * stride + off < in_len`.
#[inline]
fn valid_range(off: isize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let span = in_len as isize - off;
    let hi = if span <= 0 { 0 } else { (span + s - 1) / s };
    let hi = (hi as usize).min(out_len);
    (lo as usize, hi.max(lo as usize))
}

/// `y[o][f] = b[o] + sum_{i,k} w[o][i][k] * x[i][f*stride + k - pad]`.
pub fn conv1d<T: Scalar>(
    x: &Tensor2<T>,
    w: &[T],
    b: &[T],
    g: &ConvGeom,
    out_frames: usize,
) -> Tensor2<T> {
    debug_assert_eq!(x.channels(), g.in_ch);
    let in_len = x.frames();
    let mut y = Tensor2::zeros(Shape::new(g.out_ch, out_frames));
    for o in 0..g.out_ch {
        let yr = y.row_mut(o);
        yr.fill(b[o]);
        for i in 0..g.in_ch {
            let xr = x.row(i);
            let wrow = &w[(o * g.in_ch + i) * g.kernel..][..g.kernel];
            for (k, &wv) in wrow.iter().enumerate() {
                let off = k as isize - g.pad as isize;
                let (lo, hi) = valid_range(off, g.stride, in_len, out_frames);
                if g.stride == 1 {
                    let base = (lo as isize + off) as usize;
                    let xs = &xr[base..base + (hi - lo)];
                    for (yv, &xv) in yr[lo..hi].iter_mut().zip(xs) {
                        *yv += wv * xv;
                    }
                } else {
                    for f in lo..hi {
                        yr[f] += wv * xr[(f as isize * g.stride as isize + off) as usize];
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv1d`] given the upstream gradient `gy`.
/// Returns `(dx, dw, db)`.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor2<T>,
    w: &[T],
    g: &ConvGeom,
    gy: &Tensor2<T>,
) -> (Tensor2<T>, Vec<T>, Vec<T>) {
    let in_len = x.frames();
    let out_len = gy.frames();
    let mut dx = Tensor2::zeros(x.shape());
    let mut dw = vec![T::zero(); g.weight_len()];
    let mut db = vec![T::zero(); g.out_ch];
    for o in 0..g.out_ch {
        let gr = gy.row(o);
        db[o] = gr.iter().copied().sum();
        for i in 0..g.in_ch {
            let xr = x.row(i);
            let widx = (o * g.in_ch + i) * g.kernel;
            for k in 0..g.kernel {
                let wv = w[widx + k];
                let off = k as isize - g.pad as isize;
                let (lo, hi) = valid_range(off, g.stride, in_len, out_len);
                let mut acc = T::zero();
                if g.stride == 1 {
                    let base = (lo as isize + off) as usize;
                    let xs = &xr[base..base + (hi - lo)];
                    for (&gv, &xv) in gr[lo..hi].iter().zip(xs) {
                        acc += gv * xv;
                    }
                    let dxr = &mut dx.row_mut(i)[base..base + (hi - lo)];
                    for (d, &gv) in dxr.iter_mut().zip(&gr[lo..hi]) {
                        *d += wv * gv;
                    }
                } else {
                    let dxr = dx.row_mut(i);
                    for f in lo..hi {
                        let xi = (f as isize * g.stride as isize + off) as usize;
                        acc += gr[f] * xr[xi];
                        dxr[xi] += wv * gr[f];
                    }
                }
                dw[widx + k] = acc;
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution:
/// `y[o][f*stride + k - pad] += w[i][o][k] * x[i][f]`, plus bias.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor2<T>,
    w: &[T],
    b: &[T],
    g: &ConvGeom,
    out_frames: usize,
) -> Tensor2<T> {
    debug_assert_eq!(x.channels(), g.in_ch);
    let in_len = x.frames();
    let mut y = Tensor2::zeros(Shape::new(g.out_ch, out_frames));
    for o in 0..g.out_ch {
        y.row_mut(o).fill(b[o]);
    }
    for i in 0..g.in_ch {
        let xr = x.row(i);
        for o in 0..g.out_ch {
            let wrow = &w[(i * g.out_ch + o) * g.kernel..][..g.kernel];
            let yr = y.row_mut(o);
            for (k, &wv) in wrow.iter().enumerate() {
                // y index = f*stride + off; valid frames f with 0 <= idx < out_frames
                let off = k as isize - g.pad as isize;
                let (lo, hi) = valid_range(off, g.stride, out_frames, in_len);
                for f in lo..hi {
                    yr[(f as isize * g.stride as isize + off) as usize] += wv * xr[f];
                }
            }
        }
    }
    y
}

/// Gradients of [`conv_transpose1d`]. Returns `(dx, dw, db)`.
pub fn conv_transpose1d_backward<T: Scalar>(
    x: &Tensor2<T>,
    w: &[T],
    g: &ConvGeom,
    gy: &Tensor2<T>,
) -> (Tensor2<T>, Vec<T>, Vec<T>) {
    let in_len = x.frames();
    let out_len = gy.frames();
    let mut dx = Tensor2::zeros(x.shape());
    let mut dw = vec![T::zero(); g.weight_len()];
    let db = (0..g.out_ch)
        .map(|o| gy.row(o).iter().copied().sum())
        .collect();
    for i in 0..g.in_ch {
        let xr = x.row(i);
        for o in 0..g.out_ch {
            let gr = gy.row(o);
            let widx = (i * g.out_ch + o) * g.kernel;
            for k in 0..g.kernel {
                let wv = w[widx + k];
                let off = k as isize - g.pad as isize;
                let (lo, hi) = valid_range(off, g.stride, out_len, in_len);
                let mut acc = T::zero();
                let dxr = dx.row_mut(i);
                for f in lo..hi {
                    let gv = gr[(f as isize * g.stride as isize + off) as usize];
                    acc += gv * xr[f];
                    dxr[f] += wv * gv;
                }
                dw[widx + k] = acc;
            }
        }
    }
    (dx, dw, db)
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `ln(1 + e^x)`, a smooth ramp.
    #[default]
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Softplus => {
                if x > T::of(30.0) {
                    x
                } else if x < T::of(-30.0) {
                    x.exp()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Softplus => T::one() / (T::one() + (-x).exp()),
            Activation::Identity => T::one(),
        }
    }

    pub fn forward<T: Scalar>(self, pre: &Tensor2<T>) -> Tensor2<T> {
        pre.map(|v| self.apply(v))
    }

    /// Chains `grad` (w.r.t. the activation output) through the activation.
    pub fn backward<T: Scalar>(self, pre: &Tensor2<T>, grad: &Tensor2<T>) -> Tensor2<T> {
        match self {
            Activation::Identity => grad.clone(),
            _ => pre
                .zip_with(grad, |p, g| g * self.derivative(p))
                .expect("activation shapes agree"),
        }
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of one layer's
/// weights; biases start at zero.
pub fn init_uniform<T: Scalar, R: rand::Rng + ?Sized>(
    g: &ConvGeom,
    rng: &mut R,
) -> (Vec<T>, Vec<T>) {
    let bound = 1.0 / (g.fan_in() as f64).sqrt();
    let w = (0..g.weight_len())
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    (w, vec![T::zero(); g.out_ch])
}
