//! Midway-infilling sweep over `(tau, gamma)`.

use std::path::Path;

use dequant_core::diffusion::SamplerKind;
use dequant_core::metrics::mean_report;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{io_err, Error, Result};
use crate::eval::score;
use crate::models::ModelBundle;
use crate::ops::{decode_tokens, encode_waveform, DecodeMode, SamplerChoice};

/// One grid cell: mean metrics over the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tau: usize,
    pub gamma: f64,
    pub snr_db: f64,
    pub lsd_db: f64,
    pub mse: f64,
}

/// Decodes `clips` at every `(tau, gamma)` pair, rows in `tau`-major
/// order. Clip `i` uses sampler seed `cfg.sampler.seed + i` in every cell.
pub fn ablation_grid(
    cfg: &PipelineConfig,
    models: &ModelBundle,
    taus: &[usize],
    gammas: &[f64],
    clips: &[Vec<f64>],
) -> Result<Vec<AblationRow>> {
    if taus.is_empty() || gammas.is_empty() {
        return Err(Error::Invalid("ablation grid is empty".into()));
    }
    if clips.is_empty() {
        return Err(Error::Invalid("ablation test set is empty".into()));
    }
    let tokens = clips
        .iter()
        .map(|x| encode_waveform(cfg, models, x))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(taus.len() * gammas.len());
    for &tau in taus {
        for &gamma in gammas {
            let mut choice = SamplerChoice::from_config(cfg);
            choice.kind = SamplerKind::Midway;
            choice.config.tau = tau;
            choice.config.gamma = gamma;
            choice.config.validate(cfg.schedule.steps)?;
            let reports = clips
                .iter()
                .zip(&tokens)
                .enumerate()
                .map(|(i, (x, t))| {
                    let c = choice.with_seed(cfg.sampler.seed.wrapping_add(i as u64));
                    score(
                        x,
                        &decode_tokens(cfg, models, t, DecodeMode::Diffusion, &c)?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let m = mean_report(&reports).expect("non-empty");
            eprintln!(
                "[ablate] tau={tau} gamma={gamma}: snr {:.3} dB, lsd {:.3} dB",
                m.snr_db, m.lsd_db
            );
            rows.push(AblationRow {
                tau,
                gamma,
                snr_db: m.snr_db,
                lsd_db: m.lsd_db,
                mse: m.mse,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        let rows = vec![
            AblationRow {
                tau: 100,
                gamma: 0.3,
                snr_db: 1.5,
                lsd_db: 2.25,
                mse: 0.01,
            },
            AblationRow {
                tau: 10,
                gamma: 1.0,
                snr_db: -0.5,
                lsd_db: 7.0,
                mse: 0.2,
            },
        ];
        write_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("tau,gamma,snr_db,lsd_db,mse\n"));
        assert_eq!(read_csv(&p).unwrap(), rows);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let cfg = PipelineConfig::toy();
        let m = ModelBundle::default();
        assert!(ablation_grid(&cfg, &m, &[], &[0.0], &[vec![0.0; 10]]).is_err());
        assert!(ablation_grid(&cfg, &m, &[10], &[], &[vec![0.0; 10]]).is_err());
    }
}
