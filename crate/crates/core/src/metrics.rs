//! Objective waveform quality measures.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};
use crate::fft::{fft, hann};
use crate::scalar::Scalar;
use crate::tensor::Tensor2;

/// Ceiling applied when the error energy vanishes.
pub const SNR_CAP_DB: f64 = 120.0;
/// Magnitude floor inside the log-spectral distance.
pub const LSD_FLOOR: f64 = 1e-10;

/// `10 log10(sum ref^2 / sum (ref - est)^2)`, capped at [`SNR_CAP_DB`].
pub fn snr<T: Scalar>(reference: &[T], estimate: &[T]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(shape_mismatch(reference.len(), estimate.len()));
    }
    let signal: f64 = reference.iter().map(|v| v.as_f64().powi(2)).sum();
    if signal == 0.0 {
        return Err(invalid("SNR reference is all zeros"));
    }
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(&r, &e)| (r - e).as_f64().powi(2))
        .sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> Vec<usize> {
    if len <= frame {
        vec![0]
    } else {
        (0..=(len - frame) / hop).map(|i| i * hop).collect()
    }
}

/// One-sided floored magnitude spectrum of a Hann-windowed frame starting at
/// `start` (zero-padded past the end).
fn magnitudes<T: Scalar>(x: &[T], start: usize, win: &[f64]) -> Result<Vec<f64>> {
    let n = win.len();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let v = x.get(start + i).map_or(0.0, |v| v.as_f64());
            Complex::new(v * win[i], 0.0)
        })
        .collect();
    fft(&mut buf)?;
    Ok(buf[..=n / 2]
        .iter()
        .map(|c| c.norm().max(LSD_FLOOR))
        .collect())
}

/// Root mean square over frames of the per-frame RMS log-magnitude
/// difference, in dB.
pub fn log_spectral_distance<T: Scalar>(
    reference: &[T],
    estimate: &[T],
    frame: usize,
    hop: usize,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(shape_mismatch(reference.len(), estimate.len()));
    }
    if frame < 2 || !frame.is_power_of_two() {
        return Err(invalid(format!("LSD frame {frame} is not a power of two")));
    }
    if hop == 0 {
        return Err(invalid("LSD hop must be positive"));
    }
    let win = hann::<f64>(frame);
    let starts = frame_starts(reference.len(), frame, hop);
    let mut acc = 0.0;
    for &s in &starts {
        let r = magnitudes(reference, s, &win)?;
        let e = magnitudes(estimate, s, &win)?;
        let per_bin: f64 = r
            .iter()
            .zip(&e)
            .map(|(a, b)| (20.0 * (a / b).log10()).powi(2))
            .sum::<f64>()
            / r.len() as f64;
        acc += per_bin;
    }
    Ok((acc / starts.len() as f64).sqrt())
}

/// Elementwise sample mean and unbiased variance.
pub fn empirical_moments<T: Scalar>(samples: &[Tensor2<T>]) -> Result<(Tensor2<T>, Tensor2<T>)> {
    if samples.len() < 2 {
        return Err(invalid("moments need at least two samples"));
    }
    let shape = samples[0].shape();
    let mut mean = vec![0.0f64; shape.len()];
    for s in samples {
        s.expect_shape(shape)?;
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v.as_f64();
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; shape.len()];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.as_slice()).zip(&mean) {
            *acc += (v.as_f64() - m).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n - 1.0);
    Ok((
        Tensor2::from_vec(shape, mean.into_iter().map(T::of).collect())?,
        Tensor2::from_vec(shape, var.into_iter().map(T::of).collect())?,
    ))
}

/// Quality of one decoded clip against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub snr_db: f64,
    pub lsd_db: f64,
    pub mse: f64,
    pub sample_count: usize,
}

/// LSD analysis frame used by [`evaluate`].
pub const LSD_FRAME: usize = 512;
pub const LSD_HOP: usize = 128;

pub fn evaluate<T: Scalar>(reference: &[T], estimate: &[T]) -> Result<MetricReport> {
    let snr_db = snr(reference, estimate)?;
    let lsd_db = log_spectral_distance(reference, estimate, LSD_FRAME, LSD_HOP)?;
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(&r, &e)| (r - e).as_f64().powi(2))
        .sum::<f64>()
        / reference.len().max(1) as f64;
    Ok(MetricReport {
        snr_db,
        lsd_db,
        mse,
        sample_count: reference.len(),
    })
}

/// Averages the fields of several reports; `sample_count` is summed.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(MetricReport {
        snr_db: reports.iter().map(|r| r.snr_db).sum::<f64>() / n,
        lsd_db: reports.iter().map(|r| r.lsd_db).sum::<f64>() / n,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        sample_count: reports.iter().map(|r| r.sample_count).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn sine(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.05).sin()).collect()
    }

    #[test]
    fn snr_edge_cases() {
        let r = sine(100);
        assert_eq!(snr(&r, &r).unwrap(), SNR_CAP_DB);
        assert_eq!(snr(&r, &vec![0.0; 100]).unwrap(), 0.0);
        assert!(snr(&r, &r[..99]).is_err());
        assert!(snr(&[0.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn lsd_identity_and_gain() {
        let r = sine(2048);
        assert_eq!(log_spectral_distance(&r, &r, 256, 64).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let d = log_spectral_distance(&r, &twice, 256, 64).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-9, "{d}");
        assert!(log_spectral_distance(&r, &r, 100, 64).is_err());
    }

    #[test]
    fn moments_small_cases() {
        let x = Tensor2::from_vec(Shape::new(1, 2), vec![1.5, -0.5]).unwrap();
        let (m, v) = empirical_moments(&[x.clone(), x.clone()]).unwrap();
        assert_eq!(m, x);
        assert!(v.as_slice().iter().all(|&v| v == 0.0));
        let a = Tensor2::filled(Shape::new(1, 1), -1.0);
        let b = Tensor2::filled(Shape::new(1, 1), 1.0);
        let (m, v) = empirical_moments(&[a.clone(), b]).unwrap();
        assert_eq!(m.as_slice(), &[0.0]);
        assert_eq!(v.as_slice(), &[2.0]);
        assert!(empirical_moments(&[a]).is_err());
    }
}
