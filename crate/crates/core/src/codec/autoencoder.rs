use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spectral::{multiscale_spectral_loss, SpectralLossConfig};
use crate::denoiser::{TrainConfig, Trained};
use crate::error::{invalid, shape_mismatch, Result};
use crate::layers::{
    conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, init_uniform, Activation,
    ConvGeom,
};
use crate::optim::{adam_step, AdamState};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor2};

/// Architecture of a strided convolutional autoencoder. The encoder has one
/// layer per stride; the decoder mirrors it with transposed convolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeConfig {
    pub strides: Vec<usize>,
    /// Width of every layer except the latent one.
    pub base_channels: usize,
    /// Kernel per layer; `2 * stride` (or 3 for stride 1) when absent.
    #[serde(default)]
    pub kernels: Option<Vec<usize>>,
    pub latent_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl AeConfig {
    pub fn new(strides: Vec<usize>, base_channels: usize, latent_dim: usize) -> Self {
        Self {
            strides,
            base_channels,
            kernels: None,
            latent_dim,
            activation: Activation::Softplus,
        }
    }

    /// Total downsampling factor, the product of the strides.
    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.kernels.clone().unwrap_or_else(|| {
            self.strides
                .iter()
                .map(|&s| if s == 1 { 3 } else { 2 * s })
                .collect()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(invalid("autoencoder strides must be non-empty and >= 1"));
        }
        if self.base_channels == 0 || self.latent_dim == 0 {
            return Err(invalid("autoencoder channel counts must be positive"));
        }
        let ks = self.kernel_sizes();
        if ks.len() != self.strides.len() {
            return Err(invalid("one kernel size per stride is required"));
        }
        for (&k, &s) in ks.iter().zip(&self.strides) {
            if k < s {
                return Err(invalid(format!("kernel {k} shorter than its stride {s}")));
            }
        }
        Ok(())
    }

    fn encoder_geoms(&self) -> Vec<ConvGeom> {
        let n = self.strides.len();
        let ks = self.kernel_sizes();
        (0..n)
            .map(|i| {
                let inc = if i == 0 { 1 } else { self.base_channels };
                let outc = if i == n - 1 {
                    self.latent_dim
                } else {
                    self.base_channels
                };
                ConvGeom::strided(inc, outc, ks[i], self.strides[i])
            })
            .collect()
    }

    fn decoder_geoms(&self) -> Vec<ConvGeom> {
        self.encoder_geoms()
            .iter()
            .rev()
            .map(|g| ConvGeom {
                in_ch: g.out_ch,
                out_ch: g.in_ch,
                ..*g
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_geoms()
            .iter()
            .chain(self.decoder_geoms().iter())
            .map(ConvGeom::param_len)
            .sum()
    }
}

/// Autoencoder weights. Encoder layers come first, then decoder layers,
/// each as weights followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T> {
    cfg: AeConfig,
    enc: Vec<ConvGeom>,
    dec: Vec<ConvGeom>,
    params: Vec<T>,
}

/// Intermediate activations of one encode/decode pass.
#[derive(Debug, Clone)]
pub struct AeForward<T> {
    /// Input of every layer, encoder then decoder.
    inputs: Vec<Tensor2<T>>,
    /// Pre-activation output of every layer.
    pre: Vec<Tensor2<T>>,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn init(cfg: AeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = cfg.encoder_geoms();
        let dec = cfg.decoder_geoms();
        let mut params = Vec::with_capacity(cfg.param_count());
        for g in enc.iter().chain(&dec) {
            let (w, b) = init_uniform::<T, _>(g, &mut rng);
            params.extend(w);
            params.extend(b);
        }
        Ok(Self {
            cfg,
            enc,
            dec,
            params,
        })
    }

    pub fn from_params(cfg: AeConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        if params.len() != cfg.param_count() {
            return Err(shape_mismatch(
                format!("{} parameters", cfg.param_count()),
                params.len(),
            ));
        }
        Ok(Self {
            enc: cfg.encoder_geoms(),
            dec: cfg.decoder_geoms(),
            cfg,
            params,
        })
    }

    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn hop(&self) -> usize {
        self.cfg.hop()
    }

    /// `(weights, biases)` ranges of every layer, encoder first.
    fn blocks(&self) -> Vec<(ConvGeom, usize, usize)> {
        let mut off = 0;
        self.enc
            .iter()
            .chain(&self.dec)
            .map(|g| {
                let w = off;
                off += g.param_len();
                (*g, w, w + g.weight_len())
            })
            .collect()
    }

    fn n_enc(&self) -> usize {
        self.enc.len()
    }

    /// Number of samples after right zero padding to a multiple of the hop.
    pub fn padded_len(&self, len: usize) -> usize {
        len.div_ceil(self.hop()) * self.hop()
    }

    fn run_layers(
        &self,
        mut cur: Tensor2<T>,
        range: std::ops::Range<usize>,
        mut trace: Option<&mut AeForward<T>>,
    ) -> Tensor2<T> {
        let blocks = self.blocks();
        let n_enc = self.n_enc();
        for li in range {
            let (g, w, b) = blocks[li];
            let is_enc = li < n_enc;
            let pre = if is_enc {
                conv1d(
                    &cur,
                    &self.params[w..b],
                    &self.params[b..b + g.out_ch],
                    &g,
                    cur.frames() / g.stride,
                )
            } else {
                conv_transpose1d(
                    &cur,
                    &self.params[w..b],
                    &self.params[b..b + g.out_ch],
                    &g,
                    cur.frames() * g.stride,
                )
            };
            let last = li == n_enc - 1 || li == blocks.len() - 1;
            let out = if last {
                pre.clone()
            } else {
                self.cfg.activation.forward(&pre)
            };
            if let Some(tr) = trace.as_deref_mut() {
                tr.inputs.push(cur);
                tr.pre.push(pre);
            }
            cur = out;
        }
        cur
    }

    /// Latent of a waveform whose length is a multiple of the hop.
    fn encode_aligned(&self, x: &[T]) -> Tensor2<T> {
        let input = Tensor2::from_vec(Shape::new(1, x.len()), x.to_vec()).expect("1 x len");
        self.run_layers(input, 0..self.n_enc(), None)
    }

    /// Encodes a waveform, zero-padding on the right to a multiple of the hop.
    pub fn encode(&self, x: &[T]) -> Result<Tensor2<T>> {
        if x.is_empty() {
            return Err(invalid("cannot encode an empty waveform"));
        }
        let mut padded = x.to_vec();
        padded.resize(self.padded_len(x.len()), T::zero());
        Ok(self.encode_aligned(&padded))
    }

    /// Decodes a latent to `frames * hop` samples.
    pub fn decode(&self, z: &Tensor2<T>) -> Result<Vec<T>> {
        if z.channels() != self.cfg.latent_dim {
            return Err(shape_mismatch(
                format!("{} latent channels", self.cfg.latent_dim),
                z.channels(),
            ));
        }
        let n = self.n_enc();
        Ok(self.run_layers(z.clone(), n..2 * n, None).into_vec())
    }

    /// `decode(encode(x))` truncated to the input length.
    pub fn reconstruct(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = self.decode(&self.encode(x)?)?;
        y.truncate(x.len());
        Ok(y)
    }

    /// Full encode/decode pass on a hop-aligned crop, keeping activations.
    pub fn forward_traced(&self, x: &[T]) -> Result<(Vec<T>, AeForward<T>)> {
        if x.is_empty() || x.len() % self.hop() != 0 {
            return Err(invalid("traced pass needs a non-empty hop-aligned crop"));
        }
        let mut tr = AeForward {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let input = Tensor2::from_vec(Shape::new(1, x.len()), x.to_vec())?;
        let y = self.run_layers(input, 0..2 * self.n_enc(), Some(&mut tr));
        Ok((y.into_vec(), tr))
    }

    /// Decoder-only pass on a latent, keeping activations.
    pub fn decode_traced(&self, z: &Tensor2<T>) -> Result<(Vec<T>, AeForward<T>)> {
        if z.channels() != self.cfg.latent_dim {
            return Err(shape_mismatch(self.cfg.latent_dim, z.channels()));
        }
        let mut tr = AeForward {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let n = self.n_enc();
        let y = self.run_layers(z.clone(), n..2 * n, Some(&mut tr));
        Ok((y.into_vec(), tr))
    }

    /// Parameter gradient of a traced pass given `dLoss/dOutput`. Works for
    /// both full and decoder-only traces; untouched layers get zero gradient.
    pub fn backward_traced(&self, tr: &AeForward<T>, grad_out: &[T]) -> Vec<T> {
        let blocks = self.blocks();
        let n_enc = self.n_enc();
        let first = blocks.len() - tr.pre.len();
        let mut grad = vec![T::zero(); self.params.len()];
        let last_pre = tr.pre.last().expect("non-empty trace");
        let mut g = Tensor2::from_vec(last_pre.shape(), grad_out.to_vec()).expect("output shape");
        for (ti, li) in (first..blocks.len()).enumerate().rev() {
            let (geom, w, b) = blocks[li];
            let last = li == n_enc - 1 || li == blocks.len() - 1;
            let dpre = if last {
                g
            } else {
                self.cfg.activation.backward(&tr.pre[ti], &g)
            };
            let (dx, dw, db) = if li < n_enc {
                conv1d_backward(&tr.inputs[ti], &self.params[w..b], &geom, &dpre)
            } else {
                conv_transpose1d_backward(&tr.inputs[ti], &self.params[w..b], &geom, &dpre)
            };
            grad[w..b].copy_from_slice(&dw);
            grad[b..b + geom.out_ch].copy_from_slice(&db);
            g = dx;
        }
        grad
    }
}

/// Encodes a waveform (`f_enc`).
pub fn ae_encode<T: Scalar>(ae: &Autoencoder<T>, x: &[T]) -> Result<Tensor2<T>> {
    ae.encode(x)
}

/// Decodes a latent (`f_dec`); output has `frames * hop` samples.
pub fn ae_decode<T: Scalar>(ae: &Autoencoder<T>, z: &Tensor2<T>) -> Result<Vec<T>> {
    ae.decode(z)
}

/// Autoencoder training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub train: TrainConfig,
    /// Multi-scale spectral loss added to the waveform MSE; off when `None`.
    #[serde(default)]
    pub spectral: Option<SpectralLossConfig>,
}

/// Draws a hop-aligned crop of `len` samples, zero-padding short signals.
fn draw_crop<T: Scalar, R: Rng + ?Sized>(
    signal: &[T],
    len: usize,
    hop: usize,
    rng: &mut R,
) -> Vec<T> {
    if signal.len() <= len {
        let mut v = signal.to_vec();
        v.resize(len.max(signal.len().div_ceil(hop) * hop), T::zero());
        return v;
    }
    let start = rng.random_range(0..=signal.len() - len);
    signal[start..start + len].to_vec()
}

/// Trains the autoencoder to reconstruct `signals` under waveform MSE.
pub fn train_autoencoder<T: Scalar>(
    signals: &[Vec<T>],
    cfg: AeConfig,
    tcfg: &AeTrainConfig,
) -> Result<Trained<Autoencoder<T>>> {
    let ae = Autoencoder::init(cfg, tcfg.train.seed)?;
    let step = |ae: &Autoencoder<T>, crop: &[T]| -> Result<(f64, Vec<T>)> {
        let (y, tr) = ae.forward_traced(crop)?;
        let n = T::of_usize(y.len());
        let mut loss = 0.0;
        let mut g: Vec<T> = y
            .iter()
            .zip(crop)
            .map(|(&a, &b)| {
                let d = a - b;
                loss += (d * d).as_f64();
                T::of(2.0) * d / n
            })
            .collect();
        loss /= y.len() as f64;
        if let Some(sc) = &tcfg.spectral {
            let (sl, sg) = multiscale_spectral_loss(&y, crop, sc)?;
            loss += sl;
            for (a, b) in g.iter_mut().zip(sg) {
                *a += b;
            }
        }
        Ok((loss, ae.backward_traced(&tr, &g)))
    };
    fit(ae, signals, &tcfg.train, step)
}

/// Generic Adam loop over random hop-aligned crops.
pub(crate) fn fit<T: Scalar, F>(
    mut ae: Autoencoder<T>,
    signals: &[Vec<T>],
    cfg: &TrainConfig,
    step: F,
) -> Result<Trained<Autoencoder<T>>>
where
    F: Fn(&Autoencoder<T>, &[T]) -> Result<(f64, Vec<T>)>,
{
    cfg.validate()?;
    if signals.is_empty() || signals.iter().all(Vec::is_empty) {
        return Err(invalid("training set is empty"));
    }
    let hop = ae.hop();
    let crop = cfg.crop_frames.unwrap_or(64).max(1) * hop;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xae));
    let mut state = AdamState::new(ae.params.len());
    let mut trace = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        let mut grad = vec![T::zero(); ae.params.len()];
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..signals.len());
            let x = draw_crop(&signals[i], crop, hop, &mut rng);
            let (l, g) = step(&ae, &x)?;
            batch_loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let inv = T::one() / T::of_usize(cfg.batch_size);
        grad.iter_mut().for_each(|g| *g *= inv);
        adam_step(&mut ae.params, &grad, &mut state, &cfg.adam)?;
        trace.push(batch_loss / cfg.batch_size as f64);
    }
    Ok(Trained {
        model: ae,
        loss_trace: trace,
    })
}

/// Fine-tunes only the decoder so that `decode(latents[i]) ≈ targets[i]`
/// under waveform MSE, e.g. on quantized latents. Encoder weights are left
/// untouched.
pub fn train_decoder<T: Scalar>(
    mut ae: Autoencoder<T>,
    latents: &[Tensor2<T>],
    targets: &[Vec<T>],
    cfg: &TrainConfig,
) -> Result<Trained<Autoencoder<T>>> {
    cfg.validate()?;
    if latents.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if latents.len() != targets.len() {
        return Err(shape_mismatch(latents.len(), targets.len()));
    }
    let hop = ae.hop();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xdec));
    let mut state = AdamState::new(ae.params.len());
    let mut trace = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        let mut grad = vec![T::zero(); ae.params.len()];
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..latents.len());
            let frames = latents[i].frames();
            let start = crate::denoiser::crop_start(frames, cfg.crop_frames, &mut rng);
            let len = cfg.crop_frames.map_or(frames, |l| l.min(frames));
            let z = latents[i].slice_frames(start, len)?;
            let (y, tr) = ae.decode_traced(&z)?;
            let n = T::of_usize(y.len());
            let g: Vec<T> = y
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let target = targets[i]
                        .get(start * hop + j)
                        .copied()
                        .unwrap_or(T::zero());
                    let d = v - target;
                    batch_loss += (d * d).as_f64() / y.len() as f64;
                    T::of(2.0) * d / n
                })
                .collect();
            for (a, b) in grad.iter_mut().zip(ae.backward_traced(&tr, &g)) {
                *a += b;
            }
        }
        let inv = T::one() / T::of_usize(cfg.batch_size);
        grad.iter_mut().for_each(|g| *g *= inv);
        adam_step(&mut ae.params, &grad, &mut state, &cfg.adam)?;
        trace.push(batch_loss / cfg.batch_size as f64);
    }
    Ok(Trained {
        model: ae,
        loss_trace: trace,
    })
}
