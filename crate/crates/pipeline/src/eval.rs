//! Direct versus diffusion decoding on a held-out set.

use std::path::Path;

use dequant_core::diffusion::SamplerKind;
use dequant_core::metrics::{evaluate, mean_report, MetricReport};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{io_err, Error, Result};
use crate::models::ModelBundle;
use crate::ops::{decode_tokens, encode_waveform, DecodeMode, SamplerChoice};
use crate::synth::{synth_dataset, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipReport {
    pub index: usize,
    pub direct: MetricReport,
    pub diffusion: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub clips: usize,
    pub bitrate_bps: f64,
    pub sampler: SamplerKind,
    pub tau: usize,
    pub gamma: f64,
    pub seed: u64,
    pub direct: MetricReport,
    pub diffusion: MetricReport,
    pub per_clip: Vec<ClipReport>,
}

/// Metrics of `est` against `reference`, ignoring decoder padding.
pub fn score(reference: &[f64], est: &[f64]) -> Result<MetricReport> {
    let n = reference.len();
    if est.len() < n {
        return Err(Error::Invalid(format!(
            "decoded {} samples for {n}",
            est.len()
        )));
    }
    Ok(evaluate(reference, &est[..n])?)
}

/// Held-out synthetic clips from the `data` section.
pub fn test_set(cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
    let spec = SynthSpec {
        seed: cfg.data.test_seed,
        duration_s: cfg.data.test_seconds,
        ..cfg.synth.clone()
    };
    synth_dataset(&spec, cfg.data.test_clips, cfg.audio.sample_rate)
}

/// Decodes every clip both ways. Clip `i` is sampled with seed
/// `sampler.seed + i`.
pub fn evaluate_set(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    clips: &[Vec<f64>],
    sampler: &SamplerChoice,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let mut per_clip = Vec::with_capacity(clips.len());
    let mut bitrate = 0.0;
    for (i, x) in clips.iter().enumerate() {
        let tokens = encode_waveform(cfg, models, x)?;
        bitrate = tokens.bitrate();
        let seeded = sampler.with_seed(sampler.config.seed.wrapping_add(i as u64));
        let direct = decode_tokens(cfg, models, &tokens, DecodeMode::Direct, &seeded)?;
        let diffusion = decode_tokens(cfg, models, &tokens, DecodeMode::Diffusion, &seeded)?;
        per_clip.push(ClipReport {
            index: i,
            direct: score(x, &direct)?,
            diffusion: score(x, &diffusion)?,
        });
    }
    let mean = |f: fn(&ClipReport) -> MetricReport| {
        mean_report(&per_clip.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    Ok(EvalReport {
        clips: clips.len(),
        bitrate_bps: bitrate,
        sampler: sampler.kind,
        tau: sampler.config.tau,
        gamma: sampler.config.gamma,
        seed: sampler.config.seed,
        direct: mean(|c| c.direct.clone()),
        diffusion: mean(|c| c.diffusion.clone()),
        per_clip,
    })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes `direct_NNNN.wav` and `diffusion_NNNN.wav` for every clip,
/// trimmed to the input length, using the same seeds as [`evaluate_set`].
pub fn write_decoded(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    clips: &[Vec<f64>],
    sampler: &SamplerChoice,
    dir: &Path,
) -> Result<()> {
    for (i, x) in clips.iter().enumerate() {
        let tokens = encode_waveform(cfg, models, x)?;
        let seeded = sampler.with_seed(sampler.config.seed.wrapping_add(i as u64));
        for (name, mode) in [
            ("direct", DecodeMode::Direct),
            ("diffusion", DecodeMode::Diffusion),
        ] {
            let y = decode_tokens(cfg, models, &tokens, mode, &seeded)?;
            let path = dir.join(format!("{name}_{i:04}.wav"));
            crate::wav::write_wav(&path, &y[..x.len().min(y.len())], cfg.audio.sample_rate)?;
        }
    }
    Ok(())
}
