//! Configuration, synthetic data, audio I/O, training orchestration and
//! evaluation around `dequant-core`.

pub mod ablation;
pub mod config;
pub mod error;
pub mod eval;
pub mod models;
pub mod ops;
pub mod selftest;
pub mod synth;
pub mod train;
pub mod wav;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use models::ModelBundle;
pub use ops::{
    decode_file, decode_tokens, encode_file, encode_waveform, DecodeMode, SamplerChoice,
};
pub use synth::{synth_dataset, SynthSpec};
