//! Trained model files inside a model directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use dequant_core::checkpoint::{Checkpoint, DenoiserMeta};
use dequant_core::{Autoencoder, ConditionUpsampler, ConvDenoiser, Rvq};

use crate::error::{io_err, Error, Result};

pub const DISCRETE_AE: &str = "discrete_ae.ckpt";
pub const RVQ: &str = "rvq.ckpt";
pub const CONTINUOUS_AE: &str = "continuous_ae.ckpt";
pub const UPSAMPLER: &str = "upsampler.ckpt";
pub const DENOISER: &str = "denoiser.ckpt";

/// Whatever subset of the models has been trained so far.
#[derive(Debug, Clone, Default)]
pub struct ModelBundle {
    pub dir: PathBuf,
    pub discrete_ae: Option<Autoencoder>,
    pub rvq: Option<Rvq>,
    pub continuous_ae: Option<Autoencoder>,
    pub upsampler: Option<ConditionUpsampler>,
    pub denoiser: Option<(ConvDenoiser, DenoiserMeta)>,
}

fn read_ck(path: &Path) -> Result<Option<Checkpoint>> {
    if !path.exists() {
        return Ok(None);
    }
    let f = File::open(path).map_err(io_err(path))?;
    Ok(Some(Checkpoint::read(BufReader::new(f))?))
}

fn write_ck(path: &Path, ck: &Checkpoint) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    ck.write(BufWriter::new(f))?;
    Ok(())
}

impl ModelBundle {
    pub fn empty(dir: &Path) -> Self {
        Self {
            dir: dir.to_owned(),
            ..Self::default()
        }
    }

    /// Loads every checkpoint present in `dir`; absent ones stay `None`.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = |name| dir.join(name);
        Ok(Self {
            dir: dir.to_owned(),
            discrete_ae: read_ck(&p(DISCRETE_AE))?
                .map(|c| Autoencoder::from_checkpoint(&c))
                .transpose()?,
            rvq: read_ck(&p(RVQ))?
                .map(|c| Rvq::from_checkpoint(&c))
                .transpose()?,
            continuous_ae: read_ck(&p(CONTINUOUS_AE))?
                .map(|c| Autoencoder::from_checkpoint(&c))
                .transpose()?,
            upsampler: read_ck(&p(UPSAMPLER))?
                .map(|c| ConditionUpsampler::from_checkpoint(&c))
                .transpose()?,
            denoiser: read_ck(&p(DENOISER))?
                .map(|c| ConvDenoiser::from_checkpoint(&c))
                .transpose()?,
        })
    }

    /// Writes every present model into `self.dir`.
    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let p = |name| self.dir.join(name);
        if let Some(m) = &self.discrete_ae {
            write_ck(&p(DISCRETE_AE), &m.to_checkpoint())?;
        }
        if let Some(m) = &self.rvq {
            write_ck(&p(RVQ), &m.to_checkpoint())?;
        }
        if let Some(m) = &self.continuous_ae {
            write_ck(&p(CONTINUOUS_AE), &m.to_checkpoint())?;
        }
        if let Some(m) = &self.upsampler {
            write_ck(&p(UPSAMPLER), &m.to_checkpoint())?;
        }
        if let Some((m, meta)) = &self.denoiser {
            write_ck(&p(DENOISER), &m.to_checkpoint(meta))?;
        }
        Ok(())
    }

    fn missing(&self, name: &'static str) -> Error {
        Error::MissingModel {
            name,
            dir: self.dir.clone(),
        }
    }

    pub fn discrete_ae(&self) -> Result<&Autoencoder> {
        self.discrete_ae
            .as_ref()
            .ok_or_else(|| self.missing(DISCRETE_AE))
    }

    pub fn rvq(&self) -> Result<&Rvq> {
        self.rvq.as_ref().ok_or_else(|| self.missing(RVQ))
    }

    pub fn continuous_ae(&self) -> Result<&Autoencoder> {
        self.continuous_ae
            .as_ref()
            .ok_or_else(|| self.missing(CONTINUOUS_AE))
    }

    pub fn upsampler(&self) -> Result<&ConditionUpsampler> {
        self.upsampler
            .as_ref()
            .ok_or_else(|| self.missing(UPSAMPLER))
    }

    pub fn denoiser(&self) -> Result<(&ConvDenoiser, &DenoiserMeta)> {
        self.denoiser
            .as_ref()
            .map(|(d, m)| (d, m))
            .ok_or_else(|| self.missing(DENOISER))
    }
}
