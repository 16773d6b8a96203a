use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dequant_core::diffusion::SamplerKind;

use dequant_pipeline::ablation::{ablation_grid, write_csv};
use dequant_pipeline::eval::{evaluate_set, test_set, write_json};
use dequant_pipeline::synth::{synth_dataset, SynthSpec};
use dequant_pipeline::wav::{load_wav_dir, write_wav_dir};
use dequant_pipeline::{
    decode_file, encode_file, selftest, train, DecodeMode, ModelBundle, PipelineConfig, Result,
    SamplerChoice,
};

#[derive(Parser)]
#[command(
    name = "dequant",
    version,
    about = "Diffusion de-quantization of low-bitrate speech tokens"
)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sampler.tau=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Model directory; overrides `paths.model_dir`.
    #[arg(long, global = true)]
    models: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Ddpm,
    Ddim,
    Midway,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Ddpm => SamplerKind::Ddpm,
            SamplerArg::Ddim => SamplerKind::Ddim,
            SamplerArg::Midway => SamplerKind::Midway,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic speech-like WAV clips.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Clip count; `data.train_clips` when omitted.
        #[arg(long)]
        count: Option<usize>,
        /// Generate the held-out set (`data.test_*`) instead of the training set.
        #[arg(long)]
        test: bool,
    },
    /// Train one of the two autoencoders.
    TrainAe {
        #[arg(long, value_enum)]
        which: Which,
        /// Directory of training WAVs; synthetic clips when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Learn the residual codebooks on the discrete encoder's latents.
    TrainRvq {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the condition upsampler and the latent denoiser.
    TrainDenoiser {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// WAV to token file.
    Encode {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Token file to WAV.
    Decode {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "diffusion")]
        mode: DecodeMode,
        /// Sampler; `sampler.kind` when omitted.
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
    },
    /// Sweep midway-infilling over (tau, gamma) and write a CSV.
    Ablate {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1000,100,10")]
        taus: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,1")]
        gammas: Vec<f64>,
        /// Directory of test WAVs; the synthetic held-out set when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use only the first N clips.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare direct and diffusion decoding; writes a JSON report.
    Eval {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        /// Also write the decoded clips under this directory.
        #[arg(long)]
        wav_dir: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

fn training_set(cfg: &PipelineConfig, data: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    match data {
        Some(dir) => load_wav_dir(dir, cfg.audio.sample_rate),
        None => synth_dataset(&cfg.synth, cfg.data.train_clips, cfg.audio.sample_rate),
    }
}

fn held_out(
    cfg: &PipelineConfig,
    data: Option<&Path>,
    limit: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut clips = match data {
        Some(dir) => load_wav_dir(dir, cfg.audio.sample_rate)?,
        None => test_set(cfg)?,
    };
    if let Some(n) = limit {
        clips.truncate(n.max(1));
    }
    Ok(clips)
}

fn run(cli: Cli) -> Result<bool> {
    let text = cli
        .config
        .as_deref()
        .map(|p| std::fs::read_to_string(p).map_err(dequant_pipeline::error::io_err(p)))
        .transpose()?;
    let mut cfg = PipelineConfig::with_overrides(text.as_deref(), &cli.overrides)?;
    if let Some(m) = cli.models {
        cfg.paths.model_dir = m;
    }
    let model_dir = cfg.paths.model_dir.clone();
    match cli.command {
        Command::Synth { out, count, test } => {
            let (spec, n) = if test {
                let spec = SynthSpec {
                    seed: cfg.data.test_seed,
                    duration_s: cfg.data.test_seconds,
                    ..cfg.synth.clone()
                };
                (spec, count.unwrap_or(cfg.data.test_clips))
            } else {
                (cfg.synth.clone(), count.unwrap_or(cfg.data.train_clips))
            };
            let clips = synth_dataset(&spec, n, cfg.audio.sample_rate)?;
            let paths = write_wav_dir(&out, &clips, cfg.audio.sample_rate)?;
            eprintln!("wrote {} clips to {}", paths.len(), out.display());
        }
        Command::TrainAe { which, data } => {
            let signals = training_set(&cfg, data.as_deref())?;
            let mut b = ModelBundle::empty(&model_dir);
            match which {
                Which::Discrete => b.discrete_ae = Some(train::train_discrete_ae(&cfg, &signals)?),
                Which::Continuous => {
                    b.continuous_ae = Some(train::train_continuous_ae(&cfg, &signals)?)
                }
            }
            b.save()?;
        }
        Command::TrainRvq { data } => {
            let signals = training_set(&cfg, data.as_deref())?;
            let loaded = ModelBundle::load(&model_dir)?;
            let ae = loaded.discrete_ae()?.clone();
            let (ae, rvq) = train::train_rvq(&cfg, ae, &signals)?;
            let mut b = ModelBundle::empty(&model_dir);
            b.discrete_ae = Some(ae);
            b.rvq = Some(rvq);
            b.save()?;
        }
        Command::TrainDenoiser { data } => {
            let signals = training_set(&cfg, data.as_deref())?;
            let m = ModelBundle::load(&model_dir)?;
            let (up, den, meta) = train::train_conditioning(
                &cfg,
                m.discrete_ae()?,
                m.rvq()?,
                m.continuous_ae()?,
                &signals,
            )?;
            let mut b = ModelBundle::empty(&model_dir);
            b.upsampler = Some(up);
            b.denoiser = Some((den, meta));
            b.save()?;
        }
        Command::Encode { input, output } => {
            let m = ModelBundle::load(&model_dir)?;
            let f = encode_file(&cfg, &m, &input, &output)?;
            eprintln!(
                "{} frames x {} stages, {} bps",
                f.tokens.frames(),
                f.tokens.stages(),
                f.bitrate()
            );
        }
        Command::Decode {
            input,
            output,
            mode,
            sampler,
        } => {
            let m = ModelBundle::load(&model_dir)?;
            let mut choice = SamplerChoice::from_config(&cfg);
            if let Some(s) = sampler {
                choice.kind = s.into();
            }
            decode_file(&cfg, &m, &input, &output, mode, &choice)?;
        }
        Command::Ablate {
            output,
            taus,
            gammas,
            data,
            limit,
        } => {
            let m = ModelBundle::load(&model_dir)?;
            let clips = held_out(&cfg, data.as_deref(), limit)?;
            let rows = ablation_grid(&cfg, &m, &taus, &gammas, &clips)?;
            write_csv(&output, &rows)?;
        }
        Command::Eval {
            output,
            data,
            limit,
            wav_dir,
        } => {
            let m = ModelBundle::load(&model_dir)?;
            let clips = held_out(&cfg, data.as_deref(), limit)?;
            let choice = SamplerChoice::from_config(&cfg);
            let report = evaluate_set(&cfg, &m, &clips, &choice)?;
            if let Some(dir) = wav_dir {
                dequant_pipeline::eval::write_decoded(&cfg, &m, &clips, &choice, &dir)?;
            }
            write_json(&output, &report)?;
            eprintln!(
                "direct: snr {:.3} dB, lsd {:.3} dB | diffusion: snr {:.3} dB, lsd {:.3} dB",
                report.direct.snr_db,
                report.direct.lsd_db,
                report.diffusion.snr_db,
                report.diffusion.lsd_db
            );
        }
        Command::Selftest => {
            let mut ok = true;
            for c in selftest::run() {
                println!(
                    "{} {}: {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.pass;
            }
            return Ok(ok);
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
