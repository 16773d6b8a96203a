//! In-place iterative radix-2 FFT.

use num_complex::Complex;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

fn bit_reverse<T>(buf: &mut [Complex<T>]) {
    let n = buf.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
}

fn transform<T: Scalar>(buf: &mut [Complex<T>], sign: f64) -> Result<()> {
    let n = buf.len();
    if !n.is_power_of_two() {
        return Err(invalid(format!("FFT length {n} is not a power of two")));
    }
    bit_reverse(buf);
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        // Twiddles computed directly in f64 to avoid recurrence drift.
        let tw: Vec<Complex<T>> = (0..half)
            .map(|k| {
                let a = ang * k as f64;
                Complex::new(T::of(a.cos()), T::of(a.sin()))
            })
            .collect();
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for ((a, b), &w) in lo.iter_mut().zip(hi.iter_mut()).zip(&tw) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// `X_k = sum_n x_n e^{-2 pi i k n / N}`.
pub fn fft<T: Scalar>(buf: &mut [Complex<T>]) -> Result<()> {
    transform(buf, -1.0)
}

/// Inverse of [`fft`], including the `1/N` factor.
pub fn ifft<T: Scalar>(buf: &mut [Complex<T>]) -> Result<()> {
    transform(buf, 1.0)?;
    let inv = T::one() / T::of_usize(buf.len());
    for v in buf.iter_mut() {
        *v = *v * inv;
    }
    Ok(())
}

/// Periodic Hann window of length `n`.
pub fn hann<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            T::of(0.5 - 0.5 * x.cos())
        })
        .collect()
}
