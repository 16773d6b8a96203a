//! Optional multi-resolution STFT magnitude loss for autoencoder training.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::{fft, hann, ifft};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLossConfig {
    /// FFT sizes, powers of two; hop is a quarter of each.
    pub fft_sizes: Vec<usize>,
    pub weight: f64,
}

impl Default for SpectralLossConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![64, 128, 256],
            weight: 1.0,
        }
    }
}

/// Mean squared STFT-magnitude error summed over resolutions, and its
/// gradient with respect to `est`.
pub fn multiscale_spectral_loss<T: Scalar>(
    est: &[T],
    target: &[T],
    cfg: &SpectralLossConfig,
) -> Result<(f64, Vec<T>)> {
    if est.len() != target.len() {
        return Err(invalid("spectral loss inputs differ in length"));
    }
    let mut grad = vec![T::zero(); est.len()];
    let mut total = 0.0;
    let w = T::of(cfg.weight);
    let tiny = T::of(1e-12);
    for &n in &cfg.fft_sizes {
        if !n.is_power_of_two() || n < 4 {
            return Err(invalid(format!(
                "spectral FFT size {n} must be a power of two >= 4"
            )));
        }
        if est.len() < n {
            continue;
        }
        let hop = n / 4;
        let win = hann::<T>(n);
        let starts: Vec<usize> = (0..=(est.len() - n) / hop).map(|f| f * hop).collect();
        let count = T::of_usize(starts.len() * (n / 2 + 1));
        let mut loss = T::zero();
        for &s in &starts {
            let frame = |x: &[T]| -> Result<Vec<Complex<T>>> {
                let mut b: Vec<Complex<T>> = (0..n)
                    .map(|i| Complex::new(x[s + i] * win[i], T::zero()))
                    .collect();
                fft(&mut b)?;
                Ok(b)
            };
            let y = frame(est)?;
            let x = frame(target)?;
            let mut h = vec![Complex::new(T::zero(), T::zero()); n];
            for k in 0..=n / 2 {
                let (my, mx) = (y[k].norm(), x[k].norm());
                let d = my - mx;
                loss += d * d;
                let c = T::of(2.0) * w * d / (count * my.max(tiny));
                h[k] = y[k] * c;
            }
            ifft(&mut h)?;
            for i in 0..n {
                // ifft carries 1/n; the adjoint needs the plain sum.
                grad[s + i] += win[i] * h[i].re * T::of_usize(n);
            }
        }
        total += (w * loss / count).as_f64();
    }
    Ok((total, grad))
}
