#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Settings small enough for the full CLI pipeline to run in seconds.
pub const TINY_TOML: &str = r#"
[audio]
crop_seconds = 0.08

[synth]
duration_s = 0.4

[data]
train_clips = 4
test_clips = 2
test_seconds = 0.2

[schedule]
steps = 50

[sampler]
tau = 20
ddim_steps = 10

[discrete]
base_channels = 4
latent_dim = 4
codebook_size = 16
kmeans_iters = 5
[discrete.train]
batch_size = 2
learning_rate = 1e-3
max_steps = 10
[discrete.decoder_finetune]
batch_size = 2
learning_rate = 1e-3
max_steps = 5

[continuous]
base_channels = 4
latent_dim = 4
[continuous.train]
batch_size = 2
learning_rate = 1e-3
max_steps = 10

[upsampler]
hidden = 4
[upsampler.train]
batch_size = 2
learning_rate = 1e-3
max_steps = 10

[denoiser]
hidden = [8, 8]
time_features = 4
range_channels = true
[denoiser.train]
batch_size = 2
learning_rate = 1e-3
max_steps = 10
crop_frames = 32
"#;

pub fn dequant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dequant"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every artifact of one end-to-end run under `root`, mirroring the
/// commands in the README walkthrough.
pub fn run_tiny_pipeline(root: &Path) -> Vec<PathBuf> {
    let cfg = root.join("tiny.toml");
    std::fs::write(&cfg, TINY_TOML).unwrap();
    let models = root.join("models");
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_owned();
    let c = cfg.to_str().unwrap();
    let m = models.to_str().unwrap();
    let base = |cmd: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec!["-c".into(), c.into(), "--models".into(), m.into()];
        v.extend(cmd.iter().map(|s| s.to_string()));
        v
    };
    let run = |cmd: &[&str]| {
        let args = base(cmd);
        ok(&dequant(
            &args.iter().map(String::as_str).collect::<Vec<_>>(),
        ));
    };
    run(&["synth", "--out", &p("train")]);
    run(&["synth", "--test", "--out", &p("test")]);
    run(&["train-ae", "--which", "discrete", "--data", &p("train")]);
    run(&["train-rvq", "--data", &p("train")]);
    run(&["train-ae", "--which", "continuous", "--data", &p("train")]);
    run(&["train-denoiser", "--data", &p("train")]);
    run(&[
        "encode",
        "-i",
        &p("test/clip_0000.wav"),
        "-o",
        &p("out/clip.tok"),
    ]);
    run(&[
        "decode",
        "-i",
        &p("out/clip.tok"),
        "-o",
        &p("out/direct.wav"),
        "--mode",
        "direct",
    ]);
    run(&[
        "decode",
        "-i",
        &p("out/clip.tok"),
        "-o",
        &p("out/midway.wav"),
    ]);
    run(&[
        "decode",
        "-i",
        &p("out/clip.tok"),
        "-o",
        &p("out/ddim.wav"),
        "--sampler",
        "ddim",
    ]);
    run(&[
        "ablate",
        "--data",
        &p("test"),
        "--taus",
        "50,20,5",
        "--gammas",
        "0,0.5,1",
        "-o",
        &p("out/grid.csv"),
    ]);
    run(&[
        "eval",
        "--data",
        &p("test"),
        "-o",
        &p("out/eval.json"),
        "--wav-dir",
        &p("out/eval"),
    ]);
    let mut files = vec![
        p("out/clip.tok"),
        p("out/direct.wav"),
        p("out/midway.wav"),
        p("out/ddim.wav"),
        p("out/grid.csv"),
        p("out/eval.json"),
        p("out/eval/direct_0000.wav"),
        p("out/eval/diffusion_0001.wav"),
    ];
    for name in [
        "discrete_ae",
        "rvq",
        "continuous_ae",
        "upsampler",
        "denoiser",
    ] {
        files.push(
            models
                .join(format!("{name}.ckpt"))
                .to_str()
                .unwrap()
                .to_owned(),
        );
    }
    files.into_iter().map(PathBuf::from).collect()
}
