use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::condition::{scale_frames, ConditionTensor};
use crate::denoiser::{TrainConfig, Trained};
use crate::error::{invalid, shape_mismatch, Result};
use crate::layers::{
    conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, init_uniform, Activation,
    ConvGeom,
};
use crate::optim::{adam_step, AdamState};
use crate::quantizer::{rvq_decode, Rvq, TokenSequence};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor2};

/// Ratio of the continuous to the discrete frame rate, which must be a
/// positive integer.
pub fn upsample_factor(continuous_hz: f64, discrete_hz: f64) -> Result<usize> {
    if !(continuous_hz > 0.0 && discrete_hz > 0.0) {
        return Err(invalid("frame rates must be positive"));
    }
    let r = continuous_hz / discrete_hz;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * r {
        return Err(invalid(format!(
            "frame-rate ratio {continuous_hz}/{discrete_hz} = {r} is not a positive integer"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// A learned transposed convolution, optionally followed by two
    /// convolutions through a hidden width.
    Learned,
    /// Each frame repeated `factor` times.
    Nearest,
}

/// Maps token embeddings onto the continuous latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionUpsampler<T> {
    mode: UpsampleMode,
    factor: usize,
    in_channels: usize,
    out_channels: usize,
    /// Hidden width of the deep variant; 0 for a single transposed conv.
    hidden: usize,
    params: Vec<T>,
}

/// Kernel of the hidden same-length convolution.
const HIDDEN_KERNEL: usize = 5;
const HIDDEN_ACT: Activation = Activation::Softplus;

struct DeepTrace<T> {
    pre1: Tensor2<T>,
    act1: Tensor2<T>,
    pre2: Tensor2<T>,
    act2: Tensor2<T>,
}

impl<T: Scalar> ConditionUpsampler<T> {
    pub fn nearest(factor: usize, channels: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("upsampling factor must be at least 1"));
        }
        Ok(Self {
            mode: UpsampleMode::Nearest,
            factor,
            in_channels: channels,
            out_channels: channels,
            hidden: 0,
            params: Vec::new(),
        })
    }

    /// Transposed convolution with kernel `2 * factor` (1 when `factor == 1`).
    pub fn learned(
        in_channels: usize,
        out_channels: usize,
        factor: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::learned_deep(in_channels, 0, out_channels, factor, seed)
    }

    /// With `hidden > 0`: transposed convolution to `hidden` channels,
    /// softplus, a kernel-5 convolution, softplus, and a pointwise
    /// projection to `out_channels`. `hidden == 0` is [`Self::learned`].
    pub fn learned_deep(
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        factor: usize,
        seed: u64,
    ) -> Result<Self> {
        if factor == 0 || in_channels == 0 || out_channels == 0 {
            return Err(invalid("upsampler dimensions must be positive"));
        }
        let mut up = Self {
            mode: UpsampleMode::Learned,
            factor,
            in_channels,
            out_channels,
            hidden,
            params: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in up.geoms() {
            let (w, b) = init_uniform::<T, _>(&g, &mut rng);
            up.params.extend(w.into_iter().chain(b));
        }
        Ok(up)
    }

    pub fn from_params(
        mode: UpsampleMode,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        factor: usize,
        params: Vec<T>,
    ) -> Result<Self> {
        let mut up = match mode {
            UpsampleMode::Nearest => Self::nearest(factor, in_channels)?,
            UpsampleMode::Learned => {
                Self::learned_deep(in_channels, hidden, out_channels, factor, 0)?
            }
        };
        if params.len() != up.params.len() {
            return Err(shape_mismatch(
                format!("{} upsampler parameters", up.params.len()),
                params.len(),
            ));
        }
        up.params = params;
        Ok(up)
    }

    pub fn mode(&self) -> UpsampleMode {
        self.mode
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let k = if self.factor == 1 { 1 } else { 2 * self.factor };
        if self.hidden == 0 {
            return vec![ConvGeom::strided(
                self.in_channels,
                self.out_channels,
                k,
                self.factor,
            )];
        }
        vec![
            ConvGeom::strided(self.in_channels, self.hidden, k, self.factor),
            ConvGeom::same(self.hidden, self.hidden, HIDDEN_KERNEL),
            ConvGeom::same(self.hidden, self.out_channels, 1),
        ]
    }

    /// `(weights, bias)` of every layer.
    fn layer_params(&self) -> Vec<(&[T], &[T])> {
        let mut rest = &self.params[..];
        self.geoms()
            .iter()
            .map(|g| {
                let (w, r) = rest.split_at(g.weight_len());
                let (b, r) = r.split_at(g.out_ch);
                rest = r;
                (w, b)
            })
            .collect()
    }

    fn forward_learned(&self, emb: &Tensor2<T>) -> (Tensor2<T>, Option<DeepTrace<T>>) {
        let frames = emb.frames() * self.factor;
        let geoms = self.geoms();
        let lp = self.layer_params();
        let pre1 = conv_transpose1d(emb, lp[0].0, lp[0].1, &geoms[0], frames);
        if self.hidden == 0 {
            return (pre1, None);
        }
        let act1 = HIDDEN_ACT.forward(&pre1);
        let pre2 = conv1d(&act1, lp[1].0, lp[1].1, &geoms[1], frames);
        let act2 = HIDDEN_ACT.forward(&pre2);
        let y = conv1d(&act2, lp[2].0, lp[2].1, &geoms[2], frames);
        (
            y,
            Some(DeepTrace {
                pre1,
                act1,
                pre2,
                act2,
            }),
        )
    }

    /// Upsampled embedding before per-frame scaling.
    pub fn apply(&self, emb: &Tensor2<T>) -> Result<Tensor2<T>> {
        if emb.channels() != self.in_channels {
            return Err(shape_mismatch(
                format!("{} embedding channels", self.in_channels),
                emb.channels(),
            ));
        }
        let frames = emb.frames() * self.factor;
        Ok(match self.mode {
            UpsampleMode::Nearest => {
                let mut out = Tensor2::zeros(Shape::new(self.in_channels, frames));
                for c in 0..self.in_channels {
                    let src = emb.row(c);
                    for (f, v) in out.row_mut(c).iter_mut().enumerate() {
                        *v = src[f / self.factor];
                    }
                }
                out
            }
            UpsampleMode::Learned => self.forward_learned(emb).0,
        })
    }

    /// Parameter gradient of `<grad_out, apply(emb)>` for a learned upsampler.
    fn gradient(
        &self,
        emb: &Tensor2<T>,
        trace: Option<&DeepTrace<T>>,
        grad_out: &Tensor2<T>,
    ) -> Vec<T> {
        let geoms = self.geoms();
        let lp = self.layer_params();
        let Some(tr) = trace else {
            let (_, dw, db) = conv_transpose1d_backward(emb, lp[0].0, &geoms[0], grad_out);
            return dw.into_iter().chain(db).collect();
        };
        let (g2, dw3, db3) = conv1d_backward(&tr.act2, lp[2].0, &geoms[2], grad_out);
        let g2 = HIDDEN_ACT.backward(&tr.pre2, &g2);
        let (g1, dw2, db2) = conv1d_backward(&tr.act1, lp[1].0, &geoms[1], &g2);
        let g1 = HIDDEN_ACT.backward(&tr.pre1, &g1);
        let (_, dw1, db1) = conv_transpose1d_backward(emb, lp[0].0, &geoms[0], &g1);
        [dw1, db1, dw2, db2, dw3, db3].concat()
    }
}

/// Embeds tokens through the quantizer codebooks, upsamples them to the
/// continuous grid and scales every frame to `[-1, 1]`.
pub fn upsample_condition<T: Scalar>(
    tokens: &TokenSequence,
    q: &Rvq<T>,
    up: &ConditionUpsampler<T>,
) -> Result<ConditionTensor<T>> {
    let emb = rvq_decode(q, tokens)?;
    Ok(scale_frames(&up.apply(&emb)?))
}

/// Fits a learned upsampler (hidden width `hidden`, see
/// [`ConditionUpsampler::learned_deep`]) so that `apply(embeds[i]) ≈
/// targets[i]` in the mean-square sense.
pub fn train_upsampler<T: Scalar>(
    embeds: &[Tensor2<T>],
    targets: &[Tensor2<T>],
    hidden: usize,
    out_channels: usize,
    factor: usize,
    cfg: &TrainConfig,
) -> Result<Trained<ConditionUpsampler<T>>> {
    cfg.validate()?;
    let first = embeds
        .first()
        .ok_or_else(|| invalid("training set is empty"))?;
    if embeds.len() != targets.len() {
        return Err(shape_mismatch(embeds.len(), targets.len()));
    }
    for (e, t) in embeds.iter().zip(targets) {
        if t.frames() != e.frames() * factor || t.channels() != out_channels {
            return Err(shape_mismatch(
                Shape::new(out_channels, e.frames() * factor),
                t.shape(),
            ));
        }
    }
    let mut up =
        ConditionUpsampler::learned_deep(first.channels(), hidden, out_channels, factor, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0b));
    let mut state = AdamState::new(up.params.len());
    let mut trace = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        let mut grad = vec![T::zero(); up.params.len()];
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..embeds.len());
            let start = crate::denoiser::crop_start(embeds[i].frames(), cfg.crop_frames, &mut rng);
            let len = cfg
                .crop_frames
                .map_or(embeds[i].frames(), |l| l.min(embeds[i].frames()));
            let e = embeds[i].slice_frames(start, len)?;
            let t = targets[i].slice_frames(start * factor, len * factor)?;
            let (y, trace) = up.forward_learned(&e);
            let diff = y.zip_with(&t, |a, b| a - b)?;
            batch_loss += diff.mean_square().as_f64();
            let scale = T::of(2.0 / (diff.shape().len() * cfg.batch_size) as f64);
            let g = up.gradient(&e, trace.as_ref(), &diff.map(|d| d * scale));
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        adam_step(&mut up.params, &grad, &mut state, &cfg.adam)?;
        trace.push(batch_loss / cfg.batch_size as f64);
    }
    Ok(Trained {
        model: up,
        loss_trace: trace,
    })
}

/// Per-channel standardization of continuous latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit<T: Scalar>(latents: &[Tensor2<T>]) -> Result<Self> {
        let c = latents
            .first()
            .ok_or_else(|| invalid("no latents to fit"))?
            .channels();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for z in latents {
            if z.channels() != c {
                return Err(shape_mismatch(c, z.channels()));
            }
            for ch in 0..c {
                for &v in z.row(ch) {
                    sum[ch] += v.as_f64();
                    sq[ch] += v.as_f64() * v.as_f64();
                }
            }
            n += z.frames();
        }
        if n == 0 {
            return Err(invalid("no latent frames to fit"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize<T: Scalar>(&self, z: &Tensor2<T>) -> Tensor2<T> {
        let mut out = z.clone();
        for c in 0..z.channels() {
            let (m, s) = (T::of(self.mean[c]), T::of(self.std[c]));
            out.row_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn denormalize<T: Scalar>(&self, z: &Tensor2<T>) -> Tensor2<T> {
        let mut out = z.clone();
        for c in 0..z.channels() {
            let (m, s) = (T::of(self.mean[c]), T::of(self.std[c]));
            out.row_mut(c).iter_mut().for_each(|v| *v = *v * s + m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::Codebook;

    fn rvq() -> Rvq<f64> {
        Rvq::new(vec![
            Codebook::new(2, vec![0.0, 1.0, 2.0, -1.0, 4.0, 4.0]).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn factor_must_be_integer() {
        assert_eq!(upsample_factor(2000.0, 50.0).unwrap(), 40);
        assert_eq!(upsample_factor(50.0, 50.0).unwrap(), 1);
        assert!(upsample_factor(2000.0, 300.0).is_err());
        assert!(upsample_factor(10.0, 50.0).is_err());
    }

    #[test]
    fn factor_one_is_passthrough_then_scaling() {
        let q = rvq();
        let t = TokenSequence::new(vec![3], 3, vec![0, 1, 2]).unwrap();
        let up = ConditionUpsampler::nearest(1, 2).unwrap();
        let c = upsample_condition(&t, &q, &up).unwrap();
        let raw = rvq_decode(&q, &t).unwrap();
        assert_eq!(c, scale_frames(&raw));
    }

    #[test]
    fn nearest_repeats_frames() {
        let emb = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let up = ConditionUpsampler::nearest(4, 2).unwrap();
        let y = up.apply(&emb).unwrap();
        assert_eq!(y.row(0), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(y.row(1), &[3.0, 3.0, 3.0, 3.0, -4.0, -4.0, -4.0, -4.0]);
    }

    #[test]
    fn learned_output_aligns_with_continuous_grid() {
        // 320-sample discrete hop vs 8-sample continuous hop.
        let factor = upsample_factor(16000.0 / 8.0, 16000.0 / 320.0).unwrap();
        assert_eq!(factor, 40);
        let up = ConditionUpsampler::<f64>::learned(8, 16, factor, 3).unwrap();
        let emb = Tensor2::zeros(Shape::new(8, 10));
        let y = up.apply(&emb).unwrap();
        assert_eq!(y.shape(), Shape::new(16, 400));
        assert_eq!(3200 / 8, y.frames());
    }

    #[test]
    fn learned_upsampler_fits_repeat_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let embeds: Vec<Tensor2<f64>> = (0..4)
            .map(|_| Tensor2::randn(Shape::new(2, 12), &mut rng))
            .collect();
        let rep = ConditionUpsampler::nearest(2, 2).unwrap();
        let targets: Vec<_> = embeds.iter().map(|e| rep.apply(e).unwrap()).collect();
        let cfg = TrainConfig {
            batch_size: 4,
            adam: crate::optim::AdamConfig::default().with_learning_rate(0.02),
            max_steps: 400,
            seed: 5,
            crop_frames: None,
        };
        let tr = train_upsampler(&embeds, &targets, 0, 2, 2, &cfg).unwrap();
        let first: f64 = tr.loss_trace[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = tr.loss_trace[390..].iter().sum::<f64>() / 10.0;
        assert!(last < 0.05 * first, "{first} -> {last}");
    }

    #[test]
    fn deep_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = ConditionUpsampler::<f64>::learned_deep(2, 3, 2, 4, 7).unwrap();
        let emb = Tensor2::randn(Shape::new(2, 3), &mut rng);
        let w = Tensor2::randn(Shape::new(2, 12), &mut rng);
        let loss = |p: &[f64]| {
            let u = ConditionUpsampler::from_params(UpsampleMode::Learned, 2, 3, 2, 4, p.to_vec())
                .unwrap();
            let y = u.apply(&emb).unwrap();
            y.as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (_, tr) = up.forward_learned(&emb);
        let g = up.gradient(&emb, tr.as_ref(), &w);
        assert_eq!(g.len(), up.params().len());
        let mut p = up.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + 1e-5;
            let a = loss(&p);
            p[i] = orig - 1e-5;
            let b = loss(&p);
            p[i] = orig;
            let fd = (a - b) / 2e-5;
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn deep_upsampler_fits_nonlinear_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let embeds: Vec<Tensor2<f64>> = (0..6)
            .map(|_| Tensor2::randn(Shape::new(1, 10), &mut rng))
            .collect();
        let rep = ConditionUpsampler::nearest(2, 1).unwrap();
        let targets: Vec<_> = embeds
            .iter()
            .map(|e| rep.apply(e).unwrap().map(|v| v.abs()))
            .collect();
        let cfg = TrainConfig {
            batch_size: 6,
            adam: crate::optim::AdamConfig::default().with_learning_rate(0.01),
            max_steps: 600,
            seed: 1,
            crop_frames: None,
        };
        let linear = train_upsampler(&embeds, &targets, 0, 1, 2, &cfg).unwrap();
        let deep = train_upsampler(&embeds, &targets, 8, 1, 2, &cfg).unwrap();
        let tail = |t: &[f64]| t[590..].iter().sum::<f64>() / 10.0;
        assert!(tail(&deep.loss_trace) < 0.5 * tail(&linear.loss_trace));
    }

    #[test]
    fn latent_norm_round_trip() {
        let z = Tensor2::from_rows(&[vec![1.0, 3.0, 5.0], vec![-2.0, -2.0, 4.0]]).unwrap();
        let n = LatentNorm::fit(&[z.clone()]).unwrap();
        let s = n.normalize(&z);
        for c in 0..2 {
            let m: f64 = s.row(c).iter().sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
        }
        let back = n.denormalize(&s);
        for (a, b) in back.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
