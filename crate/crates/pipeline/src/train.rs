//! Training stages. Each consumes waveforms and returns models; saving is
//! left to the caller.

use std::time::Instant;

use dequant_core::checkpoint::DenoiserMeta;
use dequant_core::codec::{
    scale_frames, train_autoencoder, train_decoder, train_upsampler, ConditionTensor, LatentNorm,
    UpsampleMode,
};
use dequant_core::denoiser::train_denoiser;
use dequant_core::quantizer::{rvq_decode, rvq_encode, rvq_train};
use dequant_core::{Autoencoder, ConditionUpsampler, ConvDenoiser, Rvq, Tensor};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};

fn log(stage: &str, trace: &[f64], started: Instant) {
    let last = trace.len().saturating_sub(10);
    let tail = &trace[last..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    eprintln!(
        "[{stage}] {} steps, final loss {mean:.5}, {:.1} s",
        trace.len(),
        started.elapsed().as_secs_f64()
    );
}

fn check_signals(signals: &[Vec<f64>]) -> Result<()> {
    if signals.is_empty() || signals.iter().any(Vec::is_empty) {
        return Err(Error::Invalid(
            "training needs at least one non-empty clip".into(),
        ));
    }
    Ok(())
}

/// Zero-pads `x` to a whole number of token frames.
pub fn pad_to_tokens(cfg: &PipelineConfig, x: &[f64]) -> Vec<f64> {
    let hop = cfg.discrete_hop();
    let mut v = x.to_vec();
    v.resize(x.len().div_ceil(hop).max(1) * hop, 0.0);
    v
}

pub fn train_discrete_ae(cfg: &PipelineConfig, signals: &[Vec<f64>]) -> Result<Autoencoder> {
    check_signals(signals)?;
    let t0 = Instant::now();
    let r = train_autoencoder(signals, cfg.discrete.ae_config(), &cfg.discrete_train())?;
    log("discrete autoencoder", &r.loss_trace, t0);
    Ok(r.model)
}

pub fn train_continuous_ae(cfg: &PipelineConfig, signals: &[Vec<f64>]) -> Result<Autoencoder> {
    check_signals(signals)?;
    let t0 = Instant::now();
    let r = train_autoencoder(signals, cfg.continuous.ae_config(), &cfg.continuous_train())?;
    log("continuous autoencoder", &r.loss_trace, t0);
    Ok(r.model)
}

/// Learns the residual codebooks on every encoder frame of `signals`, then
/// optionally fine-tunes the decoder on the quantized latents. Returns the
/// (possibly updated) autoencoder with the quantizer.
pub fn train_rvq(
    cfg: &PipelineConfig,
    ae: Autoencoder,
    signals: &[Vec<f64>],
) -> Result<(Autoencoder, Rvq)> {
    check_signals(signals)?;
    let t0 = Instant::now();
    let latents: Vec<Tensor> = signals
        .iter()
        .map(|x| ae.encode(x))
        .collect::<Result<_, _>>()?;
    let dim = ae.config().latent_dim;
    let mut frames = Vec::new();
    for z in &latents {
        for f in 0..z.frames() {
            frames.extend(z.column(f));
        }
    }
    let d = &cfg.discrete;
    let rvq = rvq_train(
        &frames,
        dim,
        d.rvq_stages,
        d.codebook_size,
        d.kmeans_iters,
        d.train.seed,
    )?;
    let energies = rvq.residual_energies(&frames)?;
    eprintln!(
        "[rvq] {} frames, residual energy per stage {:?}, {:.1} s",
        frames.len() / dim,
        energies
            .iter()
            .map(|e| format!("{e:.4}"))
            .collect::<Vec<_>>(),
        t0.elapsed().as_secs_f64()
    );
    if d.decoder_finetune.max_steps == 0 {
        return Ok((ae, rvq));
    }
    let t0 = Instant::now();
    let quantized: Vec<Tensor> = latents
        .iter()
        .map(|z| rvq_decode(&rvq, &rvq_encode(&rvq, z)?))
        .collect::<Result<_, _>>()?;
    let tcfg = cfg.train_config(&d.decoder_finetune, cfg.discrete_hop());
    let r = train_decoder(ae, &quantized, signals, &tcfg)?;
    log("decoder fine-tune", &r.loss_trace, t0);
    Ok((r.model, rvq))
}

/// Token embeddings and normalized continuous latents of one clip, on
/// aligned grids.
pub struct ConditioningPair {
    pub embedding: Tensor,
    pub latent: Tensor,
}

pub fn conditioning_pairs(
    cfg: &PipelineConfig,
    discrete: &Autoencoder,
    rvq: &Rvq,
    continuous: &Autoencoder,
    signals: &[Vec<f64>],
) -> Result<Vec<ConditioningPair>> {
    signals
        .iter()
        .map(|x| {
            let x = pad_to_tokens(cfg, x);
            let tokens = rvq_encode(rvq, &discrete.encode(&x)?)?;
            Ok(ConditioningPair {
                embedding: rvq_decode(rvq, &tokens)?,
                latent: continuous.encode(&x)?,
            })
        })
        .collect()
}

/// Fits the latent normalization, the condition upsampler and the
/// denoiser.
pub fn train_conditioning(
    cfg: &PipelineConfig,
    discrete: &Autoencoder,
    rvq: &Rvq,
    continuous: &Autoencoder,
    signals: &[Vec<f64>],
) -> Result<(ConditionUpsampler, ConvDenoiser, DenoiserMeta)> {
    check_signals(signals)?;
    let factor = cfg.upsample_factor()?;
    let pairs = conditioning_pairs(cfg, discrete, rvq, continuous, signals)?;
    let raw: Vec<Tensor> = pairs.iter().map(|p| p.latent.clone()).collect();
    let norm = LatentNorm::fit(&raw)?;
    let latents: Vec<Tensor> = raw.iter().map(|z| norm.normalize(z)).collect();
    let embeds: Vec<Tensor> = pairs.into_iter().map(|p| p.embedding).collect();

    let t0 = Instant::now();
    let up = match cfg.upsampler.mode {
        UpsampleMode::Learned => {
            let tcfg = cfg.train_config(&cfg.upsampler.train, cfg.discrete_hop());
            let r = train_upsampler(
                &embeds,
                &latents,
                cfg.upsampler.hidden,
                cfg.continuous.latent_dim,
                factor,
                &tcfg,
            )?;
            log("upsampler", &r.loss_trace, t0);
            r.model
        }
        UpsampleMode::Nearest => ConditionUpsampler::nearest(factor, rvq.dim())?,
    };
    let conds: Vec<ConditionTensor<f64>> = embeds
        .iter()
        .map(|e| Ok(scale_frames(&up.apply(e)?)))
        .collect::<Result<_>>()?;

    let t0 = Instant::now();
    let schedule = cfg.schedule.build()?;
    let tcfg = cfg.train_config(&cfg.denoiser.train, cfg.continuous_hop());
    let r = train_denoiser(&latents, &conds, &schedule, cfg.denoiser_spec(), &tcfg)?;
    log("denoiser", &r.loss_trace, t0);
    let meta = DenoiserMeta {
        schedule_fingerprint: schedule.fingerprint(),
        schedule_steps: cfg.schedule.steps,
        beta_start: cfg.schedule.beta_start,
        beta_end: cfg.schedule.beta_end,
        rvq_stages: rvq.num_stages(),
        latent_norm: norm,
    };
    Ok((up, r.model, meta))
}
