//! Generative de-quantization of residual-vector-quantized speech tokens.
//!
//! Discrete tokens from a strided convolutional encoder condition a latent
//! diffusion sampler that reconstructs the latents of a second, continuous
//! autoencoder, whose decoder then produces the waveform.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod checkpoint;
pub mod codec;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod fft;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod quantizer;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Shape;

/// Deterministic generator used by every sampler and training loop.
pub type Rng = rand_chacha::ChaCha8Rng;

pub type NoiseSchedule = schedule::NoiseSchedule<f64>;
pub type NoiseSchedule32 = schedule::NoiseSchedule<f32>;
pub type Tensor = tensor::Tensor2<f64>;
pub type Tensor32 = tensor::Tensor2<f32>;
pub type LatentTensor = tensor::LatentTensor<f64>;
pub type LatentTensor32 = tensor::LatentTensor<f32>;
pub type ConditionTensor = codec::ConditionTensor<f64>;
pub type ConditionTensor32 = codec::ConditionTensor<f32>;
pub type ConvDenoiser = denoiser::ConvDenoiser<f64>;
pub type ConvDenoiser32 = denoiser::ConvDenoiser<f32>;
pub type GaussianOracle = denoiser::GaussianOracle<f64>;
pub type Autoencoder = codec::Autoencoder<f64>;
pub type ConditionUpsampler = codec::ConditionUpsampler<f64>;
pub type Codebook = quantizer::Codebook<f64>;
pub type Rvq = quantizer::Rvq<f64>;

pub use codec::{AeConfig, AeTrainConfig, LatentNorm, UpsampleMode};
pub use denoiser::{ConvDenoiserSpec, TrainConfig, Trained};
pub use diffusion::{Denoiser, SamplerConfig, SamplerKind};
pub use metrics::MetricReport;
pub use optim::AdamConfig;
pub use quantizer::{TokenFile, TokenSequence};
