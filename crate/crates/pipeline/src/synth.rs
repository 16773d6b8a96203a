//! Speech-like synthetic signals: harmonic stacks on a drifting fundamental
//! under a slow random amplitude envelope, plus a white noise floor.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Peak relative deviation of the fundamental; 0 keeps it fixed.
    pub f0_drift: f64,
    pub harmonics: usize,
    /// Highest modulation rate of the amplitude envelope; 0 disables it.
    pub envelope_hz: f64,
    /// Noise standard deviation relative to the clean signal RMS.
    pub noise_floor: f64,
    pub duration_s: f64,
    /// Output RMS is drawn uniformly from this range.
    pub rms_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            f0_min_hz: 90.0,
            f0_max_hz: 260.0,
            f0_drift: 0.08,
            harmonics: 10,
            envelope_hz: 4.0,
            noise_floor: 0.01,
            duration_s: 3.2,
            rms_range: (0.06, 0.2),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz <= self.f0_max_hz) {
            return bad("need 0 < f0_min_hz <= f0_max_hz");
        }
        if self.harmonics == 0 {
            return bad("need at least one harmonic");
        }
        let top = self.f0_max_hz * (1.0 + self.f0_drift.abs()) * self.harmonics as f64;
        if top >= f64::from(sample_rate) / 2.0 {
            return bad("highest harmonic reaches the Nyquist frequency");
        }
        if !(0.0..1.0).contains(&self.f0_drift) || self.envelope_hz < 0.0 || self.noise_floor < 0.0
        {
            return bad("drift must lie in [0, 1); envelope and noise must be non-negative");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        let (lo, hi) = self.rms_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad("rms_range must satisfy 0 < lo <= hi < 1");
        }
        Ok(())
    }

    pub fn samples(&self, sample_rate: u32) -> usize {
        (self.duration_s * f64::from(sample_rate)).round() as usize
    }
}

/// Smooth random curve in `[-1, 1]`: a normalized sum of slow sinusoids.
fn slow_curve<R: Rng>(rng: &mut R, max_hz: f64, n: usize, sr: f64) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..=1.0) * max_hz,
                rng.random_range(0.0..TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = parts.iter().map(|p| p.2).sum();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            parts
                .iter()
                .map(|&(f, ph, a)| a * (TAU * f * t + ph).sin())
                .sum::<f64>()
                / norm
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn one_clip<R: Rng>(spec: &SynthSpec, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let n = spec.samples(sample_rate);
    let f0 = rng.random_range(spec.f0_min_hz..=spec.f0_max_hz);
    let drift = if spec.f0_drift > 0.0 {
        slow_curve(rng, 3.0, n, sr)
    } else {
        vec![0.0; n]
    };
    let amps: Vec<(f64, f64)> = (1..=spec.harmonics)
        .map(|k| {
            (
                rng.random_range(0.3..1.0) / k as f64,
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let env = if spec.envelope_hz > 0.0 {
        slow_curve(rng, spec.envelope_hz, n, sr)
            .into_iter()
            .map(|c| 0.55 + 0.45 * c)
            .collect()
    } else {
        vec![1.0; n]
    };
    let mut phase = 0.0;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let v = env[i]
                * amps
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, th))| a * ((k + 1) as f64 * phase + th).sin())
                    .sum::<f64>();
            phase = (phase + TAU * f0 * (1.0 + spec.f0_drift * drift[i]) / sr) % TAU;
            v
        })
        .collect();
    if spec.noise_floor > 0.0 {
        let level = spec.noise_floor * rms(&x);
        let noise: Vec<f64> =
            dequant_core::tensor::Tensor2::<f64>::randn(dequant_core::Shape::new(1, n), rng)
                .into_vec();
        x.iter_mut().zip(noise).for_each(|(v, z)| *v += level * z);
    }
    let (lo, hi) = spec.rms_range;
    let target = rng.random_range(lo..=hi);
    let current = rms(&x);
    if current > 0.0 {
        let mut gain = target / current;
        // Keep PCM16 export free of clipping.
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak * gain > 0.99 {
            gain = 0.99 / peak;
        }
        x.iter_mut().for_each(|v| *v *= gain);
    }
    x
}

/// `n` clips from `spec`, reproducible per seed.
pub fn synth_dataset(spec: &SynthSpec, n: usize, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    spec.validate(sample_rate)?;
    if n == 0 {
        return Err(Error::Invalid("synth_dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..n)
        .map(|_| one_clip(spec, sample_rate, &mut rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_tone_peaks_at_f0() {
        let spec = SynthSpec {
            f0_min_hz: 250.0,
            f0_max_hz: 250.0,
            f0_drift: 0.0,
            harmonics: 1,
            envelope_hz: 0.0,
            noise_floor: 0.0,
            duration_s: 0.256,
            ..SynthSpec::default()
        };
        let x = &synth_dataset(&spec, 1, 16_000).unwrap()[0];
        assert_eq!(x.len(), 4096);
        let power = |k: usize| {
            let w = TAU * k as f64 / x.len() as f64;
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &v)| {
                (re + v * (w * n as f64).cos(), im - v * (w * n as f64).sin())
            });
            re * re + im * im
        };
        let peak = (1..200)
            .max_by(|&a, &b| power(a).total_cmp(&power(b)))
            .unwrap();
        assert_eq!(peak, 64); // 250 Hz * 4096 / 16000
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            duration_s: 0.1,
            ..SynthSpec::default()
        };
        assert_eq!(
            synth_dataset(&spec, 3, 16_000).unwrap(),
            synth_dataset(&spec, 3, 16_000).unwrap()
        );
        let other = SynthSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            synth_dataset(&spec, 1, 16_000).unwrap(),
            synth_dataset(&other, 1, 16_000).unwrap()
        );
    }

    #[test]
    fn default_rms_within_bounds() {
        let spec = SynthSpec {
            duration_s: 0.25,
            ..SynthSpec::default()
        };
        for x in synth_dataset(&spec, 100, 16_000).unwrap() {
            let r = rms(&x);
            assert!((0.05..=0.5).contains(&r), "rms {r}");
            assert!(x.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let too_high = SynthSpec {
            harmonics: 40,
            ..SynthSpec::default()
        };
        assert!(synth_dataset(&too_high, 1, 16_000).is_err());
        assert!(synth_dataset(&SynthSpec::default(), 0, 16_000).is_err());
        let bad_rms = SynthSpec {
            rms_range: (0.3, 0.1),
            ..SynthSpec::default()
        };
        assert!(bad_rms.validate(16_000).is_err());
    }
}
