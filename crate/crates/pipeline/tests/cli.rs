mod common;

use common::{dequant, ok, run_tiny_pipeline};
use dequant_pipeline::ablation::read_csv;
use dequant_pipeline::PipelineConfig;

#[test]
fn selftest_passes() {
    let out = dequant(&["selftest"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dequant(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dequant(&["encode", "--bogus"]).status.code(), Some(2));
    assert_eq!(dequant(&[]).status.code(), Some(2));
}

#[test]
fn encode_without_models_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    dequant_pipeline::wav::write_wav(&wav, &vec![0.1; 3200], 16_000).unwrap();
    let models = dir.path().join("none");
    let out = dequant(&[
        "--models",
        models.to_str().unwrap(),
        "encode",
        "-i",
        wav.to_str().unwrap(),
        "-o",
        dir.path().join("a.tok").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing model"), "{err}");
}

#[test]
fn bad_config_exits_1() {
    let out = dequant(&["--set", "sampler.gamma=3", "config"]);
    assert_eq!(out.status.code(), Some(1));
    let out = dequant(&["-c", "/nonexistent/dequant.toml", "config"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_prints_effective_settings() {
    let out = dequant(&["--set", "sampler.tau=42", "config"]);
    ok(&out);
    let cfg = PipelineConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.sampler.tau, 42);
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_tiny_pipeline(dir.path());
    for f in &files {
        assert!(f.exists(), "{} missing", f.display());
    }
    let rows = read_csv(&dir.path().join("out/grid.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/eval.json")).unwrap()).unwrap();
    assert_eq!(report["clips"], 2);
    assert!(report["direct"]["snr_db"].is_number());
    assert!(report["diffusion"]["lsd_db"].is_number());

    let tok = dequant_pipeline::ops::read_tokens(&dir.path().join("out/clip.tok")).unwrap();
    assert_eq!(tok.tokens.stages(), 3);
    assert_eq!(tok.bitrate(), 50.0 * 4.0 * 3.0);

    // Drop the last stage: direct decoding still works, the bitrate-specific
    // denoiser refuses it.
    let t = &tok.tokens;
    let two = dequant_core::TokenSequence::new(
        t.codebook_sizes()[..2].to_vec(),
        t.frames(),
        t.indices()[..2 * t.frames()].to_vec(),
    )
    .unwrap();
    let short = dir.path().join("out/two.tok");
    dequant_pipeline::ops::write_tokens(&short, &dequant_core::TokenFile { tokens: two, ..tok })
        .unwrap();
    let cfg = dir.path().join("tiny.toml");
    let models = dir.path().join("models");
    let decode = |mode: &str| {
        dequant(&[
            "-c",
            cfg.to_str().unwrap(),
            "--models",
            models.to_str().unwrap(),
            "decode",
            "-i",
            short.to_str().unwrap(),
            "-o",
            dir.path().join("out/two.wav").to_str().unwrap(),
            "--mode",
            mode,
        ])
    };
    ok(&decode("direct"));
    let out = decode("diffusion");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conditioned on 3"));
}
