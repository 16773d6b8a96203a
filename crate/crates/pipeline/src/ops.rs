//! Waveform ↔ token encoding and the two decoding paths.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use dequant_core::codec::scale_frames;
use dequant_core::diffusion::{sample, SamplerConfig, SamplerKind};
use dequant_core::quantizer::{read_token_file, rvq_decode, rvq_encode, write_token_file};
use dequant_core::{NoiseSchedule, Rng, Shape, TokenFile};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{io_err, Error, Result};
use crate::models::ModelBundle;
use crate::wav::{read_wav_at, write_wav};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Discrete decoder on the quantized latent.
    Direct,
    /// Diffusion de-quantization into the continuous latent.
    Diffusion,
}

/// Sampler choice for diffusion decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerChoice {
    pub kind: SamplerKind,
    pub config: SamplerConfig,
}

impl SamplerChoice {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            kind: cfg.sampler.kind,
            config: cfg.sampler.to_core(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }
}

pub fn encode_waveform(cfg: &PipelineConfig, models: &ModelBundle, x: &[f64]) -> Result<TokenFile> {
    let ae = models.discrete_ae()?;
    let rvq = models.rvq()?;
    if x.is_empty() {
        return Err(Error::Invalid("cannot encode an empty waveform".into()));
    }
    let tokens = rvq_encode(rvq, &ae.encode(x)?)?;
    Ok(TokenFile {
        tokens,
        frame_rate_hz: f64::from(cfg.audio.sample_rate) / ae.hop() as f64,
        dim: rvq.dim(),
    })
}

pub fn decode_tokens(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    file: &TokenFile,
    mode: DecodeMode,
    sampler: &SamplerChoice,
) -> Result<Vec<f64>> {
    let rvq = models.rvq()?;
    let t = &file.tokens;
    let mismatch = |m: String| {
        Err(Error::Invalid(format!(
            "token file does not fit the models: {m}"
        )))
    };
    if file.dim != rvq.dim() {
        return mismatch(format!(
            "latent dim {} vs quantizer {}",
            file.dim,
            rvq.dim()
        ));
    }
    if t.stages() > rvq.num_stages() {
        return mismatch(format!(
            "{} stages vs quantizer {}",
            t.stages(),
            rvq.num_stages()
        ));
    }
    let q = rvq.truncated(t.stages())?;
    if q.stages()
        .iter()
        .zip(t.codebook_sizes())
        .any(|(b, &k)| b.len() != k)
    {
        return mismatch("codebook sizes differ".into());
    }
    let emb = rvq_decode(&q, t)?;
    match mode {
        DecodeMode::Direct => {
            let ae = models.discrete_ae()?;
            let rate = f64::from(cfg.audio.sample_rate) / ae.hop() as f64;
            if (rate - file.frame_rate_hz).abs() > 1e-9 * rate {
                return mismatch(format!(
                    "frame rate {} Hz vs model {rate} Hz",
                    file.frame_rate_hz
                ));
            }
            Ok(ae.decode(&emb)?)
        }
        DecodeMode::Diffusion => {
            let (den, meta) = models.denoiser()?;
            let up = models.upsampler()?;
            let cont = models.continuous_ae()?;
            if t.stages() != meta.rvq_stages {
                return mismatch(format!(
                    "{} stages, but the denoiser was conditioned on {}",
                    t.stages(),
                    meta.rvq_stages
                ));
            }
            let schedule =
                NoiseSchedule::linear(meta.schedule_steps, meta.beta_start, meta.beta_end)?;
            if schedule.fingerprint() != meta.schedule_fingerprint {
                return Err(Error::Invalid(
                    "denoiser schedule fingerprint does not match".into(),
                ));
            }
            let started = Instant::now();
            let h = scale_frames(&up.apply(&emb)?);
            let shape = Shape::new(den.spec().latent_channels, h.frames());
            let mut rng = Rng::seed_from_u64(sampler.config.seed);
            let z = sample(
                sampler.kind,
                &schedule,
                den,
                &h,
                shape,
                &sampler.config,
                &mut rng,
            )?;
            let y = cont.decode(&meta.latent_norm.denormalize(&z))?;
            if std::env::var_os("DEQUANT_LOG_TIMING").is_some() {
                eprintln!(
                    "[decode] {:.2} s of audio in {:.2} s",
                    y.len() as f64 / f64::from(cfg.audio.sample_rate),
                    started.elapsed().as_secs_f64()
                );
            }
            Ok(y)
        }
    }
}

pub fn read_tokens(path: &Path) -> Result<TokenFile> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(read_token_file(BufReader::new(f))?)
}

pub fn write_tokens(path: &Path, file: &TokenFile) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let f = File::create(path).map_err(io_err(path))?;
    write_token_file(BufWriter::new(f), file)?;
    Ok(())
}

/// WAV in, token file out.
pub fn encode_file(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    wav: &Path,
    out: &Path,
) -> Result<TokenFile> {
    let x = read_wav_at(wav, cfg.audio.sample_rate)?;
    let file = encode_waveform(cfg, models, &x)?;
    write_tokens(out, &file)?;
    Ok(file)
}

/// Token file in, WAV out.
pub fn decode_file(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    tokens: &Path,
    out: &Path,
    mode: DecodeMode,
    sampler: &SamplerChoice,
) -> Result<Vec<f64>> {
    let file = read_tokens(tokens)?;
    let y = decode_tokens(cfg, models, &file, mode, sampler)?;
    write_wav(out, &y, cfg.audio.sample_rate)?;
    Ok(y)
}
