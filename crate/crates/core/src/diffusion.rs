//! Forward corruption and the reverse samplers (DDPM, DDIM, midway-infilling).
//!
//! Every sampler is a pure function of its inputs and the RNG it is handed.
//! Noise tensors are drawn in row-major order, one tensor per draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::ConditionTensor;
use crate::error::{invalid, shape_mismatch, Result};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Shape, Tensor2};

/// An ε-predictor `eps_theta(x_t, sqrt(alpha_bar_t), h)`.
pub trait Denoiser<T: Scalar> {
    /// Predicted noise, same shape as `x_t`.
    fn predict(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>>;
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn predict(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>> {
        (**self).predict(x_t, sqrt_alpha_bar, h)
    }
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for Box<D> {
    fn predict(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>> {
        (**self).predict(x_t, sqrt_alpha_bar, h)
    }
}

/// Which reverse process to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    Midway,
}

impl std::str::FromStr for SamplerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            "midway" => Ok(Self::Midway),
            other => Err(invalid(format!("unknown sampler `{other}`"))),
        }
    }
}

/// Sampler hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Midway step: the number of reverse steps midway-infilling runs.
    pub tau: usize,
    /// Interpolation ratio toward the infilling branch.
    pub gamma: f64,
    /// DDIM sub-step count.
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau: 100,
            gamma: 0.3,
            steps: 50,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule_len: usize) -> Result<()> {
        if self.tau == 0 || self.tau > schedule_len {
            return Err(invalid(format!(
                "tau must lie in [1, {schedule_len}], got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_sample<T: Scalar>(
    s: &NoiseSchedule<T>,
    x0: &Tensor2<T>,
    t: usize,
    eps: &Tensor2<T>,
) -> Result<Tensor2<T>> {
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    x0.zip_with(eps, |x, e| a * x + b * e)
}

/// One ancestral reverse step
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(1 - beta_t) + sqrt(beta_t) * n`.
/// The injected noise `n` is ignored at `t = 0`.
pub fn ddpm_step<T: Scalar, D: Denoiser<T> + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    x_t: &Tensor2<T>,
    t: usize,
    h: &ConditionTensor<T>,
    n: &Tensor2<T>,
) -> Result<Tensor2<T>> {
    s.check_step(t)?;
    n.expect_shape(x_t.shape())?;
    let beta = s.betas()[t];
    let ab = s.alpha_bars()[t];
    let eps = d.predict(x_t, ab.sqrt(), h)?;
    eps.expect_shape(x_t.shape())?;
    let inv_sqrt_alpha = T::one() / (T::one() - beta).sqrt();
    let eps_coef = beta / (T::one() - ab).sqrt();
    let mut out = x_t.zip_with(&eps, |x, e| inv_sqrt_alpha * (x - eps_coef * e))?;
    if t > 0 {
        let sigma = beta.sqrt();
        for (o, &z) in out.as_mut_slice().iter_mut().zip(n.as_slice()) {
            *o += sigma * z;
        }
    }
    Ok(out)
}

fn check_shape(shape: Shape) -> Result<()> {
    if shape.channels == 0 || shape.frames == 0 {
        return Err(invalid(format!(
            "latent shape must be non-empty, got {shape}"
        )));
    }
    Ok(())
}

/// Draws `x_{T-1}` from a standard normal, then applies [`ddpm_step`] for
/// `t = T-1, ..., 0`. RNG order: the initial draw, then one noise tensor per
/// step with `t > 0`.
pub fn ddpm_sample<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    shape: Shape,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    check_shape(shape)?;
    let x = Tensor2::randn(shape, rng);
    ddpm_sample_from(s, d, h, x, rng)
}

/// [`ddpm_sample`] from a caller-supplied starting point `x_{T-1}`.
pub fn ddpm_sample_from<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    mut x: Tensor2<T>,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    let shape = x.shape();
    let zero = Tensor2::zeros(shape);
    for t in (0..s.len()).rev() {
        x = if t > 0 {
            let n = Tensor2::randn(shape, rng);
            ddpm_step(s, d, &x, t, h, &n)?
        } else {
            ddpm_step(s, d, &x, t, h, &zero)?
        };
    }
    Ok(x)
}

/// The `steps` timesteps visited by DDIM, ascending and evenly spaced, always
/// ending at `T - 1`: `t_k = (k + 1) * T / steps - 1`.
pub fn ddim_timesteps(schedule_len: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > schedule_len {
        return Err(invalid(format!(
            "ddim steps must lie in [1, {schedule_len}], got {steps}"
        )));
    }
    Ok((0..steps)
        .map(|k| (k + 1) * schedule_len / steps - 1)
        .collect())
}

/// Deterministic (eta = 0) DDIM over an evenly spaced step subset. Consumes
/// exactly one noise tensor from `rng`, the initial state.
pub fn ddim_sample<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    shape: Shape,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    check_shape(shape)?;
    let ts = ddim_timesteps(s.len(), steps)?;
    let mut x = Tensor2::randn(shape, rng);
    for k in (0..ts.len()).rev() {
        let ab = s.alpha_bars()[ts[k]];
        let ab_prev = if k > 0 {
            s.alpha_bars()[ts[k - 1]]
        } else {
            T::one()
        };
        let eps = d.predict(&x, ab.sqrt(), h)?;
        eps.expect_shape(shape)?;
        let (sa, sb) = (ab.sqrt(), (T::one() - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (T::one() - ab_prev).sqrt());
        x = x.zip_with(&eps, |xv, e| {
            let x0 = (xv - sb * e) / sa;
            pa * x0 + pb * e
        })?;
    }
    Ok(x)
}

/// Midway-infilling.
///
/// The infilling branch starts at `s = h`, the sampling branch at
/// `x = (1 - gamma) * n + gamma * h` with `n ~ N(0, I)`. Both branches take
/// `tau` ancestral steps `t = tau-1, ..., 0` with the shared denoiser, and
/// after every step `x <- (1 - gamma) * x + gamma * s`.
///
/// RNG order: the initial draw of `n`, then per step with `t > 0` the
/// infilling-branch noise followed by the sampling-branch noise. A branch
/// that cannot influence the output is not run and draws nothing: with
/// `gamma = 0` the infilling branch is skipped (making `tau = T` identical to
/// [`ddpm_sample`]), with `gamma = 1` the sampling branch is.
pub fn midway_infilling<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    shape: Shape,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    check_shape(shape)?;
    let init = Tensor2::randn(shape, rng);
    midway_infilling_from(s, d, h, init, cfg, rng)
}

/// [`midway_infilling`] with the initial sampling-branch noise supplied.
pub fn midway_infilling_from<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    init: Tensor2<T>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    cfg.validate(s.len())?;
    let shape = init.shape();
    check_shape(shape)?;
    if h.shape() != shape {
        return Err(shape_mismatch(
            format!("condition of latent shape {shape}"),
            h.shape(),
        ));
    }
    let gamma = T::of(cfg.gamma);
    let keep = T::one() - gamma;
    let run_infill = cfg.gamma > 0.0;
    let run_sampling = cfg.gamma < 1.0;
    let mix = |x: &Tensor2<T>, s: &Tensor2<T>| x.zip_with(s, |a, b| keep * a + gamma * b);

    let mut s_branch = h.values().clone();
    let mut x = if run_infill {
        mix(&init, &s_branch)?
    } else {
        init
    };
    let zero = Tensor2::zeros(shape);
    for t in (0..cfg.tau).rev() {
        if run_infill {
            let n = if t > 0 {
                Tensor2::randn(shape, rng)
            } else {
                zero.clone()
            };
            s_branch = ddpm_step(s, d, &s_branch, t, h, &n)?;
        }
        if run_sampling {
            let n = if t > 0 {
                Tensor2::randn(shape, rng)
            } else {
                zero.clone()
            };
            x = ddpm_step(s, d, &x, t, h, &n)?;
        }
        if run_infill {
            x = mix(&x, &s_branch)?;
        }
    }
    Ok(x)
}

/// Runs the sampler selected by `kind`.
pub fn sample<T: Scalar, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    kind: SamplerKind,
    s: &NoiseSchedule<T>,
    d: &D,
    h: &ConditionTensor<T>,
    shape: Shape,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    match kind {
        SamplerKind::Ddpm => ddpm_sample(s, d, h, shape, rng),
        SamplerKind::Ddim => ddim_sample(s, d, h, shape, cfg.steps, rng),
        SamplerKind::Midway => midway_infilling(s, d, h, shape, cfg, rng),
    }
}

/// Mean squared error between `eps` and the denoiser's prediction at
/// `z_t = forward_sample(z0, t, eps)`.
pub fn training_loss<T: Scalar, D: Denoiser<T> + ?Sized>(
    s: &NoiseSchedule<T>,
    d: &D,
    z0: &Tensor2<T>,
    t: usize,
    h: &ConditionTensor<T>,
    eps: &Tensor2<T>,
) -> Result<T> {
    let zt = forward_sample(s, z0, t, eps)?;
    let pred = d.predict(&zt, s.alpha_bars()[t].sqrt(), h)?;
    Ok(pred.zip_with(eps, |p, e| p - e)?.mean_square())
}
