//! ε-predictors: a closed-form Gaussian oracle and a trainable residual
//! convolution stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::ConditionTensor;
use crate::diffusion::{forward_sample, Denoiser};
use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::layers::{conv1d, conv1d_backward, init_uniform, Activation, ConvGeom};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Shape, Tensor2};

/// Bayes-optimal ε-predictor for data `x0 ~ N(mu, sigma^2)` applied
/// independently to every element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle<T> {
    mu: T,
    sigma: T,
}

impl<T: Scalar> GaussianOracle<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(invalid("oracle sigma must be positive"));
        }
        Ok(Self { mu, sigma })
    }

    /// `E[eps | x_t]` for one element.
    #[inline]
    pub fn predict_scalar(&self, x_t: T, sqrt_alpha_bar: T) -> T {
        let a = sqrt_alpha_bar;
        let ab = a * a;
        let var = self.sigma * self.sigma;
        let gain = a * var / (ab * var + T::one() - ab);
        let x0_mean = self.mu + gain * (x_t - a * self.mu);
        (x_t - a * x0_mean) / (T::one() - ab).sqrt()
    }
}

/// Convenience constructor; the schedule is accepted for interface symmetry
/// with trained models and is not otherwise needed by the closed form.
pub fn gaussian_oracle<T: Scalar>(
    mu: T,
    sigma: T,
    _schedule: &NoiseSchedule<T>,
) -> Result<GaussianOracle<T>> {
    GaussianOracle::new(mu, sigma)
}

impl<T: Scalar> Denoiser<T> for GaussianOracle<T> {
    fn predict(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        _h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>> {
        Ok(x_t.map(|x| self.predict_scalar(x, sqrt_alpha_bar)))
    }
}

/// Architecture of a [`ConvDenoiser`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDenoiserSpec {
    pub latent_channels: usize,
    /// Channels of the condition stacked under the noisy latent.
    pub cond_channels: usize,
    /// Widths of the hidden convolutions. Consecutive equal widths get a
    /// residual connection.
    pub hidden: Vec<usize>,
    pub kernel: usize,
    /// Number of sinusoidal features of `sqrt(alpha_bar)`; even.
    pub time_features: usize,
    pub activation: Activation,
    /// Also stack each condition frame's pre-scaling `(min, max)` as two
    /// extra input channels.
    #[serde(default)]
    pub range_channels: bool,
}

impl ConvDenoiserSpec {
    pub fn new(latent_channels: usize, cond_channels: usize) -> Self {
        Self {
            latent_channels,
            cond_channels,
            hidden: vec![16, 32, 32],
            kernel: 3,
            time_features: 16,
            activation: Activation::Softplus,
            range_channels: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 {
            return Err(invalid("denoiser needs at least one latent channel"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(invalid("denoiser kernel must be odd"));
        }
        if self.time_features % 2 != 0 {
            return Err(invalid("time feature count must be even"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        self.latent_channels + self.cond_channels + if self.range_channels { 2 } else { 0 }
    }

    fn hidden_geoms(&self) -> Vec<ConvGeom> {
        let mut inc = self.input_channels();
        self.hidden
            .iter()
            .map(|&w| {
                let g = ConvGeom::same(inc, w, self.kernel);
                inc = w;
                g
            })
            .collect()
    }

    fn output_geom(&self) -> ConvGeom {
        let last = self.hidden.last().copied().unwrap_or(self.input_channels());
        ConvGeom::same(last, self.latent_channels, self.kernel)
    }

    /// Offsets of each parameter block in the flat vector.
    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut hidden = Vec::new();
        for g in self.hidden_geoms() {
            let w = off;
            let b = w + g.weight_len();
            let p = b + g.out_ch;
            off = p + g.out_ch * self.time_features;
            hidden.push(HiddenBlock { geom: g, w, b, p });
        }
        let og = self.output_geom();
        let out_w = off;
        let out_b = out_w + og.weight_len();
        Layout {
            hidden,
            out_geom: og,
            out_w,
            out_b,
            total: out_b + og.out_ch,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct HiddenBlock {
    geom: ConvGeom,
    w: usize,
    b: usize,
    /// Time-projection matrix `[out][time_features]`.
    p: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    hidden: Vec<HiddenBlock>,
    out_geom: ConvGeom,
    out_w: usize,
    out_b: usize,
    total: usize,
}

/// Sinusoidal features `sin(pi 2^j s), cos(pi 2^j s)` of `s = sqrt(alpha_bar)`.
pub fn time_embedding<T: Scalar>(sqrt_alpha_bar: T, features: usize) -> Vec<T> {
    let mut e = Vec::with_capacity(features);
    for j in 0..features / 2 {
        let w = T::of(std::f64::consts::PI * f64::powi(2.0, j as i32));
        e.push((w * sqrt_alpha_bar).sin());
        e.push((w * sqrt_alpha_bar).cos());
    }
    e
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    emb: Vec<T>,
    /// Input of each hidden layer, then the input of the output layer.
    inputs: Vec<Tensor2<T>>,
    pre: Vec<Tensor2<T>>,
}

/// Residual 1-D convolution stack predicting ε from `[x_t; h]` and
/// `sqrt(alpha_bar)`.
#[derive(Debug, Clone)]
pub struct ConvDenoiser<T> {
    spec: ConvDenoiserSpec,
    layout: Layout,
    params: Vec<T>,
    cache: Option<ForwardTrace<T>>,
}

impl<T: Scalar> ConvDenoiser<T> {
    /// Fan-in uniform initialization from `seed`.
    pub fn init(spec: ConvDenoiserSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];
        for blk in &layout.hidden {
            let (w, _) = init_uniform::<T, _>(&blk.geom, &mut rng);
            params[blk.w..blk.b].copy_from_slice(&w);
            let bound = 1.0 / (spec.time_features.max(1) as f64).sqrt();
            for v in &mut params[blk.p..blk.p + blk.geom.out_ch * spec.time_features] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        let (w, _) = init_uniform::<T, _>(&layout.out_geom, &mut rng);
        params[layout.out_w..layout.out_b].copy_from_slice(&w);
        Ok(Self {
            spec,
            layout,
            params,
            cache: None,
        })
    }

    pub fn from_params(spec: ConvDenoiserSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if params.len() != layout.total {
            return Err(shape_mismatch(
                format!("{} parameters", layout.total),
                params.len(),
            ));
        }
        Ok(Self {
            spec,
            layout,
            params,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ConvDenoiserSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn stacked_input(&self, x_t: &Tensor2<T>, h: &ConditionTensor<T>) -> Result<Tensor2<T>> {
        if x_t.channels() != self.spec.latent_channels {
            return Err(shape_mismatch(
                format!("{} latent channels", self.spec.latent_channels),
                x_t.channels(),
            ));
        }
        if h.frames() != x_t.frames() {
            return Err(shape_mismatch(
                format!("condition with {} frames", x_t.frames()),
                format!("{} frames", h.frames()),
            ));
        }
        if h.channels() != self.spec.cond_channels {
            return Err(shape_mismatch(
                format!("{} condition channels", self.spec.cond_channels),
                h.channels(),
            ));
        }
        let stacked = x_t.stack_channels(h.values())?;
        if !self.spec.range_channels {
            return Ok(stacked);
        }
        let (lo, hi): (Vec<T>, Vec<T>) = h.frame_ranges().iter().copied().unzip();
        stacked.stack_channels(&Tensor2::from_rows(&[lo, hi])?)
    }

    /// Forward pass that also returns the activations needed by
    /// [`ConvDenoiser::backward_traced`].
    pub fn forward_traced(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<(Tensor2<T>, ForwardTrace<T>)> {
        let mut cur = self.stacked_input(x_t, h)?;
        let frames = cur.frames();
        let emb = time_embedding(sqrt_alpha_bar, self.spec.time_features);
        let nf = self.spec.time_features;
        let mut inputs = Vec::with_capacity(self.layout.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.layout.hidden.len());
        for blk in &self.layout.hidden {
            let g = &blk.geom;
            let mut a = conv1d(
                &cur,
                &self.params[blk.w..blk.b],
                &self.params[blk.b..blk.p],
                g,
                frames,
            );
            for o in 0..g.out_ch {
                let proj = &self.params[blk.p + o * nf..blk.p + (o + 1) * nf];
                let shift: T = proj.iter().zip(&emb).map(|(&p, &e)| p * e).sum();
                for v in a.row_mut(o) {
                    *v += shift;
                }
            }
            let mut next = self.spec.activation.forward(&a);
            if g.in_ch == g.out_ch {
                for (n, &c) in next.as_mut_slice().iter_mut().zip(cur.as_slice()) {
                    *n += c;
                }
            }
            inputs.push(cur);
            pre.push(a);
            cur = next;
        }
        let out = conv1d(
            &cur,
            &self.params[self.layout.out_w..self.layout.out_b],
            &self.params[self.layout.out_b..],
            &self.layout.out_geom,
            frames,
        );
        inputs.push(cur);
        Ok((out, ForwardTrace { emb, inputs, pre }))
    }

    /// Parameter gradient given `grad_out = dLoss/dOutput` of the traced pass.
    pub fn backward_traced(&self, trace: &ForwardTrace<T>, grad_out: &Tensor2<T>) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let last_in = trace.inputs.last().expect("trace holds output-layer input");
        let (mut g, dw, db) = conv1d_backward(
            last_in,
            &self.params[self.layout.out_w..self.layout.out_b],
            &self.layout.out_geom,
            grad_out,
        );
        grad[self.layout.out_w..self.layout.out_b].copy_from_slice(&dw);
        grad[self.layout.out_b..].copy_from_slice(&db);
        let nf = self.spec.time_features;
        for (li, blk) in self.layout.hidden.iter().enumerate().rev() {
            let geom = &blk.geom;
            let dpre = self.spec.activation.backward(&trace.pre[li], &g);
            for o in 0..geom.out_ch {
                let s: T = dpre.row(o).iter().copied().sum();
                for (j, &e) in trace.emb.iter().enumerate() {
                    grad[blk.p + o * nf + j] = s * e;
                }
            }
            let (mut dx, dw, db) =
                conv1d_backward(&trace.inputs[li], &self.params[blk.w..blk.b], geom, &dpre);
            grad[blk.w..blk.b].copy_from_slice(&dw);
            grad[blk.b..blk.p].copy_from_slice(&db);
            if geom.in_ch == geom.out_ch {
                for (d, &r) in dx.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d += r;
                }
            }
            g = dx;
        }
        grad
    }

    /// Forward pass that caches activations for a later [`ConvDenoiser::backward`].
    pub fn forward_train(
        &mut self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>> {
        let (out, trace) = self.forward_traced(x_t, sqrt_alpha_bar, h)?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Consumes the cached forward pass and returns `dLoss/dParams`.
    pub fn backward(&mut self, grad_out: &Tensor2<T>) -> Result<Vec<T>> {
        let trace = self.cache.take().ok_or(Error::NoCachedForward)?;
        Ok(self.backward_traced(&trace, grad_out))
    }
}

impl<T: Scalar> Denoiser<T> for ConvDenoiser<T> {
    fn predict(
        &self,
        x_t: &Tensor2<T>,
        sqrt_alpha_bar: T,
        h: &ConditionTensor<T>,
    ) -> Result<Tensor2<T>> {
        self.forward_traced(x_t, sqrt_alpha_bar, h).map(|(y, _)| y)
    }
}

/// Training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_steps: usize,
    pub seed: u64,
    /// Random crop length in frames; whole examples when `None`.
    pub crop_frames: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            adam: AdamConfig::default(),
            max_steps: 1000,
            seed: 0,
            crop_frames: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        self.adam.validate()
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    /// Mean batch loss per optimizer step.
    pub loss_trace: Vec<f64>,
}

/// Draws a random crop of `len` frames (or the whole example).
pub(crate) fn crop_start<R: Rng + ?Sized>(frames: usize, len: Option<usize>, rng: &mut R) -> usize {
    match len {
        Some(l) if l < frames => rng.random_range(0..=frames - l),
        _ => 0,
    }
}

/// Minimizes the noise-prediction MSE over uniformly drawn steps.
pub fn train_denoiser<T: Scalar>(
    data: &[Tensor2<T>],
    conds: &[ConditionTensor<T>],
    schedule: &NoiseSchedule<T>,
    spec: ConvDenoiserSpec,
    cfg: &TrainConfig,
) -> Result<Trained<ConvDenoiser<T>>> {
    let model = ConvDenoiser::init(spec, cfg.seed)?;
    continue_training(model, data, conds, schedule, cfg)
}

/// [`train_denoiser`] starting from an existing model.
pub fn continue_training<T: Scalar>(
    mut model: ConvDenoiser<T>,
    data: &[Tensor2<T>],
    conds: &[ConditionTensor<T>],
    schedule: &NoiseSchedule<T>,
    cfg: &TrainConfig,
) -> Result<Trained<ConvDenoiser<T>>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if conds.len() != data.len() {
        return Err(shape_mismatch(
            format!("{} conditions", data.len()),
            conds.len(),
        ));
    }
    for (z, h) in data.iter().zip(conds) {
        if z.frames() != h.frames() {
            return Err(shape_mismatch(
                format!("condition with {} frames", z.frames()),
                h.frames(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut state = AdamState::new(model.params.len());
    let mut trace = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        let mut grad = vec![T::zero(); model.params.len()];
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..data.len());
            let start = crop_start(data[i].frames(), cfg.crop_frames, &mut rng);
            let len = cfg
                .crop_frames
                .map_or(data[i].frames(), |l| l.min(data[i].frames()));
            let z0 = data[i].slice_frames(start, len)?;
            let h = conds[i].slice_frames(start, len)?;
            let t = rng.random_range(0..schedule.len());
            let eps = Tensor2::randn(z0.shape(), &mut rng);
            let zt = forward_sample(schedule, &z0, t, &eps)?;
            let (pred, tr) = model.forward_traced(&zt, schedule.alpha_bars()[t].sqrt(), &h)?;
            let diff = pred.zip_with(&eps, |p, e| p - e)?;
            batch_loss += diff.mean_square().as_f64();
            let scale = T::of(2.0 / (diff.shape().len() * cfg.batch_size) as f64);
            let g_out = diff.map(|d| d * scale);
            for (a, b) in grad.iter_mut().zip(model.backward_traced(&tr, &g_out)) {
                *a += b;
            }
        }
        adam_step(&mut model.params, &grad, &mut state, &cfg.adam)?;
        trace.push(batch_loss / cfg.batch_size as f64);
    }
    Ok(Trained {
        model,
        loss_trace: trace,
    })
}

impl<T: Scalar> ConvDenoiser<T> {
    pub fn latent_shape_for(&self, frames: usize) -> Shape {
        Shape::new(self.spec.latent_channels, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(frames: usize) -> ConditionTensor<f64> {
        ConditionTensor::empty(frames)
    }

    #[test]
    fn standard_normal_oracle_collapses() {
        let o = GaussianOracle::new(0.0f64, 1.0).unwrap();
        for &ab in &[0.1, 0.5, 0.9] {
            let a: f64 = f64::sqrt(ab);
            for &x in &[-2.0, 0.3, 1.7] {
                let expected = (1.0 - ab).sqrt() * x;
                assert!((o.predict_scalar(x, a) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn oracle_zero_at_scaled_mean() {
        let o = GaussianOracle::new(1.3f64, 0.7).unwrap();
        let a = 0.6f64;
        assert!(o.predict_scalar(a * 1.3, a).abs() < 1e-15);
    }

    #[test]
    fn oracle_rejects_non_positive_sigma() {
        assert!(GaussianOracle::new(0.0f64, 0.0).is_err());
        assert!(GaussianOracle::new(0.0f64, -1.0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = ConvDenoiserSpec::new(2, 1);
        let n = spec.param_count();
        let m = ConvDenoiser::from_params(spec, vec![0.0f64; n]).unwrap();
        let x = Tensor2::filled(Shape::new(2, 9), 0.7);
        let h = crate::codec::scale_frames(&Tensor2::filled(Shape::new(1, 9), 0.2));
        let y = m.predict(&x, 0.5, &h).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_one_by_one_passes_latent_through() {
        let spec = ConvDenoiserSpec {
            hidden: vec![],
            kernel: 1,
            ..ConvDenoiserSpec::new(2, 3)
        };
        let mut p = vec![0.0f64; spec.param_count()];
        // output weights [out=2][in=5][k=1]
        p[0] = 1.0;
        p[5 + 1] = 1.0;
        let m = ConvDenoiser::from_params(spec, p).unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let h = crate::codec::scale_frames(
            &Tensor2::from_rows(&[vec![0.0, 1.0, 2.0], vec![3.0, 1.0, 0.0], vec![1.0; 3]]).unwrap(),
        );
        assert_eq!(m.predict(&x, 0.3, &h).unwrap(), x);
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let m = ConvDenoiser::<f64>::init(ConvDenoiserSpec::new(1, 0), 1).unwrap();
        let x = Tensor2::zeros(Shape::new(1, 5));
        assert!(m.predict(&x, 0.5, &cond(4)).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut m = ConvDenoiser::<f64>::init(ConvDenoiserSpec::new(1, 0), 1).unwrap();
        let g = Tensor2::zeros(Shape::new(1, 4));
        assert!(matches!(m.backward(&g), Err(Error::NoCachedForward)));
        let x = Tensor2::filled(Shape::new(1, 4), 0.1);
        m.forward_train(&x, 0.5, &cond(4)).unwrap();
        assert!(m.backward(&g).is_ok());
        assert!(matches!(m.backward(&g), Err(Error::NoCachedForward)));
    }

    #[test]
    fn single_pointwise_layer_gradient_closed_form() {
        // eps_hat = w * x + b on one channel; L = (eps_hat - eps)^2.
        let spec = ConvDenoiserSpec {
            hidden: vec![],
            kernel: 1,
            ..ConvDenoiserSpec::new(1, 0)
        };
        let mut m = ConvDenoiser::from_params(spec, vec![0.8f64, 0.1]).unwrap();
        let x = Tensor2::filled(Shape::new(1, 1), 1.5);
        let eps = 0.4;
        let y = m.forward_train(&x, 0.5, &cond(1)).unwrap();
        let r = y.get(0, 0) - eps;
        let g = m
            .backward(&Tensor2::filled(Shape::new(1, 1), 2.0 * r))
            .unwrap();
        assert!((g[0] - 2.0 * r * 1.5).abs() < 1e-15);
        assert!((g[1] - 2.0 * r).abs() < 1e-15);
    }

    #[test]
    fn empty_training_set_rejected() {
        let s = NoiseSchedule::<f64>::linear(10, 1e-4, 0.02).unwrap();
        let r = train_denoiser(
            &[],
            &[],
            &s,
            ConvDenoiserSpec::new(1, 0),
            &TrainConfig::default(),
        );
        assert!(r.is_err());
    }
}
