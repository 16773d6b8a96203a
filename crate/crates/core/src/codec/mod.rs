//! Strided convolutional autoencoders, condition upsampling and per-frame
//! condition scaling.

mod autoencoder;
mod condition;
mod spectral;
mod upsample;

pub use autoencoder::{
    ae_decode, ae_encode, train_autoencoder, train_decoder, AeConfig, AeForward, AeTrainConfig,
    Autoencoder,
};
pub use condition::{scale_frames, ConditionTensor};
pub use spectral::{multiscale_spectral_loss, SpectralLossConfig};
pub use upsample::{
    train_upsampler, upsample_condition, upsample_factor, ConditionUpsampler, LatentNorm,
    UpsampleMode,
};
