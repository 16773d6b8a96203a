//! Variance schedule of the forward diffusion chain.
//!
//! Steps are 0-based: a chain of length `T` has steps `0..T`, and step `t`
//! here is step `t + 1` in the usual 1-based DDPM notation.

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Per-step noise variances `beta[t]` and their cumulative signal retention
/// `alpha_bar[t] = prod_{i <= t} (1 - beta[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Betas spaced linearly from `beta_start` (step 0) to `beta_end` (step `T - 1`).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(invalid(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps).map(|i| beta_start + i as f64 * step).collect()
        };
        Self::from_betas_f64(&betas)
    }

    /// Builds a schedule from an explicit non-decreasing beta sequence.
    pub fn from_betas_f64(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(invalid("every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("betas must be non-decreasing"));
        }
        // Accumulate in f64 regardless of T.
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for &b in betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas: betas.iter().map(|&b| T::of(b)).collect(),
            alpha_bars: alpha_bars.into_iter().map(T::of).collect(),
        })
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> Result<T> {
        self.check_step(t)?;
        Ok(self.betas[t])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<T> {
        self.check_step(t)?;
        Ok(self.alpha_bars[t])
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::OutOfRange {
                what: "diffusion step",
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Stable identifier of the beta sequence, recorded in checkpoints so a
    /// denoiser is never paired with a schedule it was not trained on.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        for b in &self.betas {
            hasher.update(b.as_f64().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 0.02).abs() < 1e-15);
        assert!(s.alpha_bars()[999] < 1e-3);
    }

    #[test]
    fn constant_two_step() {
        let s = NoiseSchedule::<f64>::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
        assert_eq!(s.alpha_bar(1).unwrap(), 0.25);
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::<f64>::linear(1, 0.01, 0.01).unwrap();
        assert_eq!(s.betas(), &[0.01]);
        assert_eq!(s.alpha_bars(), &[0.99]);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0 - s.betas()[0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(NoiseSchedule::<f64>::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::<f64>::from_betas_f64(&[0.2, 0.1]).is_err());
    }

    #[test]
    fn out_of_range_step() {
        let s = NoiseSchedule::<f64>::linear(2, 0.5, 0.5).unwrap();
        assert!(matches!(s.alpha_bar(2), Err(Error::OutOfRange { .. })));
        assert!(s.beta(5).is_err());
    }

    #[test]
    fn f32_schedule_tracks_f64() {
        let a = NoiseSchedule::<f32>::linear(1000, 1e-4, 0.02).unwrap();
        let b = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        for (x, y) in a.alpha_bars().iter().zip(b.alpha_bars()) {
            assert!((*x as f64 - y).abs() <= 1e-6 * y.max(1e-6) + 1e-9);
        }
    }

    #[test]
    fn fingerprint_distinguishes_schedules() {
        let a = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        let b = NoiseSchedule::<f64>::linear(100, 1e-4, 0.02).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
