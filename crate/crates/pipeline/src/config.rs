//! Pipeline configuration: a TOML document with one section per stage.
//! Every field has a default, so a config file only lists what it changes.

use std::path::{Path, PathBuf};

use dequant_core::codec::{AeConfig, AeTrainConfig, SpectralLossConfig, UpsampleMode};
use dequant_core::denoiser::{ConvDenoiserSpec, TrainConfig};
use dequant_core::diffusion::{SamplerConfig, SamplerKind};
use dequant_core::layers::Activation;
use dequant_core::optim::AdamConfig;
use dequant_core::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub audio: AudioSection,
    pub synth: SynthSpec,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub sampler: SamplerSection,
    pub discrete: DiscreteSection,
    pub continuous: ContinuousSection,
    pub upsampler: UpsamplerSection,
    pub denoiser: DenoiserSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioSection {
    pub sample_rate: u32,
    /// Training crop length in seconds, used by every stage whose
    /// `crop_frames` is unset.
    pub crop_seconds: f64,
}

impl Default for AudioSection {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            crop_seconds: 3.2,
        }
    }
}

/// Sizes of the synthetic corpora used when no WAV directory is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_clips: usize,
    pub test_clips: usize,
    pub test_seconds: f64,
    /// Seed of the held-out set; the training set uses `synth.seed`.
    pub test_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_clips: 200,
            test_clips: 50,
            test_seconds: 3.2,
            test_seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule<f64>> {
        Ok(NoiseSchedule::linear(
            self.steps,
            self.beta_start,
            self.beta_end,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub tau: usize,
    pub gamma: f64,
    pub ddim_steps: usize,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Midway,
            tau: 100,
            gamma: 0.3,
            ddim_steps: 50,
            seed: 0,
        }
    }
}

impl SamplerSection {
    pub fn to_core(&self) -> SamplerConfig {
        SamplerConfig {
            tau: self.tau,
            gamma: self.gamma,
            steps: self.ddim_steps,
            seed: self.seed,
        }
    }
}

/// Optimizer loop settings shared by every trainable stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Crop length in frames of the stage's own grid; `audio.crop_seconds`
    /// if unset.
    pub crop_frames: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 20,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            max_steps: 1000,
            seed: 0,
            crop_frames: None,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            max_steps: self.max_steps,
            seed: self.seed,
            crop_frames: self.crop_frames,
        }
    }
}

/// Token path: strided encoder, residual quantizer, mirrored decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteSection {
    pub strides: Vec<usize>,
    pub base_channels: usize,
    pub kernels: Option<Vec<usize>>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub rvq_stages: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    /// Multi-scale spectral loss added during training; off when absent.
    pub spectral: Option<SpectralLossConfig>,
    pub train: TrainSection,
    /// Decoder fine-tuning on quantized latents after the codebooks are
    /// learned; skipped when `max_steps` is 0.
    pub decoder_finetune: TrainSection,
}

impl Default for DiscreteSection {
    fn default() -> Self {
        Self {
            strides: vec![2, 4, 5, 8],
            base_channels: 32,
            kernels: None,
            latent_dim: 8,
            activation: Activation::Softplus,
            rvq_stages: 3,
            codebook_size: 1024,
            kmeans_iters: 20,
            spectral: None,
            train: TrainSection::default(),
            decoder_finetune: TrainSection {
                max_steps: 0,
                ..TrainSection::default()
            },
        }
    }
}

impl DiscreteSection {
    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            strides: self.strides.clone(),
            base_channels: self.base_channels,
            kernels: self.kernels.clone(),
            latent_dim: self.latent_dim,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuousSection {
    pub strides: Vec<usize>,
    pub base_channels: usize,
    pub kernels: Option<Vec<usize>>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub spectral: Option<SpectralLossConfig>,
    pub train: TrainSection,
}

impl Default for ContinuousSection {
    fn default() -> Self {
        Self {
            strides: vec![8],
            base_channels: 32,
            kernels: None,
            latent_dim: 16,
            activation: Activation::Softplus,
            spectral: None,
            train: TrainSection::default(),
        }
    }
}

impl ContinuousSection {
    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            strides: self.strides.clone(),
            base_channels: self.base_channels,
            kernels: self.kernels.clone(),
            latent_dim: self.latent_dim,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsamplerSection {
    pub mode: UpsampleMode,
    /// Hidden width of the learned upsampler; 0 for one transposed conv.
    pub hidden: usize,
    pub train: TrainSection,
}

impl Default for UpsamplerSection {
    fn default() -> Self {
        Self {
            mode: UpsampleMode::Learned,
            hidden: 0,
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub time_features: usize,
    pub activation: Activation,
    pub range_channels: bool,
    pub train: TrainSection,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let spec = ConvDenoiserSpec::new(1, 1);
        Self {
            hidden: spec.hidden,
            kernel: spec.kernel,
            time_features: spec.time_features,
            activation: spec.activation,
            range_channels: spec.range_channels,
            train: TrainSection::default(),
        }
    }
}

impl DenoiserSection {
    pub fn spec(&self, latent_channels: usize, cond_channels: usize) -> ConvDenoiserSpec {
        ConvDenoiserSpec {
            latent_channels,
            cond_channels,
            hidden: self.hidden.clone(),
            kernel: self.kernel,
            time_features: self.time_features,
            activation: self.activation,
            range_channels: self.range_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub model_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            model_dir: PathBuf::from("models"),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            audio: AudioSection::default(),
            synth: SynthSpec::default(),
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            sampler: SamplerSection::default(),
            discrete: DiscreteSection::default(),
            continuous: ContinuousSection::default(),
            upsampler: UpsamplerSection::default(),
            denoiser: DenoiserSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Commented template holding the reference defaults.
pub const DEFAULT_TOML: &str = include_str!("../../../config/default.toml");
/// Desk-scale settings used by the toy experiments and the acceptance suite.
pub const TOY_TOML: &str = include_str!("../../../config/toy.toml");

impl PipelineConfig {
    pub fn toy() -> Self {
        Self::from_toml(TOY_TOML).expect("bundled toy config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    /// Parses `text` (or the defaults when `None`) and applies
    /// `section.key=value` overrides, where `value` is a TOML literal or a
    /// bare string.
    pub fn with_overrides(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
            None => {
                toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts
                .pop()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| Error::Config(format!("override `{ov}` has an empty key")))?;
            let mut table = &mut doc;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
            }
            table.insert(last.to_owned(), value);
        }
        let cfg: Self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.audio.sample_rate == 0 || !(self.audio.crop_seconds > 0.0) {
            return bad("sample_rate and crop_seconds must be positive".into());
        }
        self.schedule.build()?;
        self.sampler.to_core().validate(self.schedule.steps)?;
        if self.sampler.ddim_steps == 0 || self.sampler.ddim_steps > self.schedule.steps {
            return bad(format!(
                "ddim_steps must lie in [1, {}]",
                self.schedule.steps
            ));
        }
        self.discrete.ae_config().validate()?;
        self.continuous.ae_config().validate()?;
        if self.discrete.rvq_stages == 0 || self.discrete.codebook_size < 2 {
            return bad("the quantizer needs at least one stage of two or more entries".into());
        }
        self.denoiser_spec().validate()?;
        self.synth.validate(self.audio.sample_rate)?;
        self.upsample_factor()?;
        Ok(())
    }

    /// Denoiser architecture; the condition has the continuous latent width
    /// after a learned upsampler and the token embedding width otherwise.
    pub fn denoiser_spec(&self) -> ConvDenoiserSpec {
        let cond = match self.upsampler.mode {
            UpsampleMode::Learned => self.continuous.latent_dim,
            UpsampleMode::Nearest => self.discrete.latent_dim,
        };
        self.denoiser.spec(self.continuous.latent_dim, cond)
    }

    /// Core training settings for a stage running on frames of `hop` samples.
    pub fn train_config(&self, train: &TrainSection, hop: usize) -> TrainConfig {
        let mut t = train.to_core();
        let crop = self.audio.crop_seconds * f64::from(self.audio.sample_rate) / hop as f64;
        t.crop_frames = t.crop_frames.or(Some((crop.round() as usize).max(1)));
        t
    }

    pub fn discrete_train(&self) -> AeTrainConfig {
        AeTrainConfig {
            train: self.train_config(&self.discrete.train, self.discrete_hop()),
            spectral: self.discrete.spectral.clone(),
        }
    }

    pub fn continuous_train(&self) -> AeTrainConfig {
        AeTrainConfig {
            train: self.train_config(&self.continuous.train, self.continuous_hop()),
            spectral: self.continuous.spectral.clone(),
        }
    }

    pub fn discrete_hop(&self) -> usize {
        self.discrete.strides.iter().product()
    }

    pub fn continuous_hop(&self) -> usize {
        self.continuous.strides.iter().product()
    }

    /// Token frames per second.
    pub fn frame_rate(&self) -> f64 {
        f64::from(self.audio.sample_rate) / self.discrete_hop() as f64
    }

    /// Continuous latent frames per token frame.
    pub fn upsample_factor(&self) -> Result<usize> {
        let sr = f64::from(self.audio.sample_rate);
        Ok(dequant_core::codec::upsample_factor(
            sr / self.continuous_hop() as f64,
            sr / self.discrete_hop() as f64,
        )?)
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matches_defaults() {
        assert_eq!(
            PipelineConfig::from_toml(DEFAULT_TOML).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn reference_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.audio.sample_rate, 16_000);
        assert_eq!(c.audio.crop_seconds, 3.2);
        assert_eq!(
            (c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end),
            (1000, 1e-4, 0.02)
        );
        assert_eq!((c.sampler.tau, c.sampler.gamma), (100, 0.3));
        assert_eq!(c.discrete.strides, vec![2, 4, 5, 8]);
        assert_eq!(c.continuous.strides, vec![8]);
        assert_eq!((c.discrete.rvq_stages, c.discrete.codebook_size), (3, 1024));
        assert_eq!(
            (c.denoiser.train.batch_size, c.denoiser.train.learning_rate),
            (20, 5e-5)
        );
        assert_eq!(c.frame_rate(), 50.0);
        assert_eq!(c.upsample_factor().unwrap(), 40);
        // 3.2 s crops: 160 token frames, 6400 continuous frames.
        assert_eq!(c.discrete_train().train.crop_frames, Some(160));
        assert_eq!(c.continuous_train().train.crop_frames, Some(6400));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = PipelineConfig::with_overrides(
            None,
            &[
                "sampler.gamma=0.5".into(),
                "sampler.kind=ddim".into(),
                "paths.model_dir=out/m".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.sampler.gamma, 0.5);
        assert_eq!(c.sampler.kind, SamplerKind::Ddim);
        assert_eq!(c.paths.model_dir, PathBuf::from("out/m"));
        assert!(PipelineConfig::with_overrides(None, &["sampler.gamma=2".into()]).is_err());
        assert!(PipelineConfig::with_overrides(None, &["sampler.nope=1".into()]).is_err());
        assert!(PipelineConfig::with_overrides(None, &["novalue".into()]).is_err());
        let toy =
            PipelineConfig::with_overrides(Some(TOY_TOML), &["sampler.tau=10".into()]).unwrap();
        assert_eq!(toy.sampler.tau, 10);
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::toy();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn non_integer_rate_ratio_rejected() {
        assert!(PipelineConfig::with_overrides(None, &["continuous.strides=[3]".into()]).is_err());
    }
}
