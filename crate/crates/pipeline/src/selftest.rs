//! Quick oracle-backed invariant checks runnable from the CLI.

use dequant_core::codec::{scale_frames, AeConfig};
use dequant_core::diffusion::{
    ddim_sample, ddpm_sample, midway_infilling, midway_infilling_from, SamplerConfig,
};
use dequant_core::quantizer::bitrate;
use dequant_core::{
    Autoencoder, Codebook, ConvDenoiser, ConvDenoiserSpec, GaussianOracle, NoiseSchedule, Rng, Rvq,
    Shape, Tensor,
};
use rand::SeedableRng;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> dequant_core::Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Largest relative error between analytic and central-difference
/// gradients of `loss` over `probe` parameter indices.
fn fd_error(
    params: &[f64],
    analytic: &[f64],
    probe: impl Iterator<Item = usize>,
    loss: impl Fn(&[f64]) -> dequant_core::Result<f64>,
) -> dequant_core::Result<f64> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for i in probe {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p)?;
        p[i] = orig - h;
        let down = loss(&p)?;
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(check("schedule matches product loop", || {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
        let mut prod = 1.0f64;
        let mut worst: f64 = 0.0;
        for t in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t as f64 / 999.0);
            worst = worst.max((s.alpha_bars()[t] - prod).abs() / prod);
        }
        Ok((
            worst < 1e-12 && s.alpha_bars()[999] < 1e-3,
            format!("max rel err {worst:.2e}"),
        ))
    }));
    out.push(check("midway gamma=0 tau=T equals DDPM", || {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05)?;
        let d = GaussianOracle::new(0.2, 0.8)?;
        let shape = Shape::new(2, 6);
        let h = scale_frames(&Tensor::randn(shape, &mut Rng::seed_from_u64(9)));
        let cfg = SamplerConfig {
            tau: 100,
            gamma: 0.0,
            ..SamplerConfig::default()
        };
        let a = midway_infilling(&s, &d, &h, shape, &cfg, &mut Rng::seed_from_u64(4))?;
        let b = ddpm_sample(&s, &d, &h, shape, &mut Rng::seed_from_u64(4))?;
        Ok((a == b, "bit-exact comparison".into()))
    }));
    out.push(check("midway gamma=1 ignores initial noise", || {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05)?;
        let d = GaussianOracle::new(0.0, 1.0)?;
        let shape = Shape::new(2, 6);
        let h = scale_frames(&Tensor::randn(shape, &mut Rng::seed_from_u64(9)));
        let cfg = SamplerConfig {
            tau: 40,
            gamma: 1.0,
            ..SamplerConfig::default()
        };
        let a = midway_infilling_from(
            &s,
            &d,
            &h,
            Tensor::randn(shape, &mut Rng::seed_from_u64(1)),
            &cfg,
            &mut Rng::seed_from_u64(5),
        )?;
        let b = midway_infilling_from(
            &s,
            &d,
            &h,
            Tensor::randn(shape, &mut Rng::seed_from_u64(2)),
            &cfg,
            &mut Rng::seed_from_u64(5),
        )?;
        Ok((a == b, "bit-exact comparison".into()))
    }));
    out.push(check("oracle DDPM and DDIM reproduce N(0, 1)", || {
        let s = NoiseSchedule::linear(200, 1e-4, 0.1)?;
        let d = GaussianOracle::new(0.0, 1.0)?;
        let shape = Shape::new(1, 4000);
        let h = dequant_core::codec::ConditionTensor::empty(4000);
        let mut detail = String::new();
        let mut pass = true;
        for (name, x) in [
            (
                "ddpm",
                ddpm_sample(&s, &d, &h, shape, &mut Rng::seed_from_u64(11))?,
            ),
            (
                "ddim",
                ddim_sample(&s, &d, &h, shape, 50, &mut Rng::seed_from_u64(12))?,
            ),
        ] {
            let v = x.as_slice();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
            pass &= mean.abs() < 0.08 && (0.85..1.15).contains(&var);
            detail += &format!("{name}: mean {mean:.3} var {var:.3}; ");
        }
        Ok((pass, detail))
    }));
    out.push(check("denoiser gradients match finite differences", || {
        let mut spec = ConvDenoiserSpec::new(2, 2);
        spec.hidden = vec![4, 4];
        spec.time_features = 4;
        spec.range_channels = true;
        let net = ConvDenoiser::init(spec.clone(), 3)?;
        let mut rng = Rng::seed_from_u64(8);
        let x = Tensor::randn(Shape::new(2, 7), &mut rng);
        let h = scale_frames(&Tensor::randn(Shape::new(2, 7), &mut rng));
        let w = Tensor::randn(Shape::new(2, 7), &mut rng);
        let loss = |p: &[f64]| -> dequant_core::Result<f64> {
            let n = ConvDenoiser::from_params(spec.clone(), p.to_vec())?;
            let (y, _) = n.forward_traced(&x, 0.7, &h)?;
            Ok(y.as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a * b)
                .sum())
        };
        let (_, tr) = net.forward_traced(&x, 0.7, &h)?;
        let g = net.backward_traced(&tr, &w);
        let err = fd_error(net.params(), &g, (0..g.len()).step_by(7), loss)?;
        Ok((err < 1e-4, format!("max rel err {err:.2e}")))
    }));
    out.push(check(
        "autoencoder gradients match finite differences",
        || {
            let cfg = AeConfig::new(vec![2, 2], 3, 2);
            let ae = Autoencoder::init(cfg.clone(), 5)?;
            let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() * 0.5).collect();
            let loss = |p: &[f64]| -> dequant_core::Result<f64> {
                let y = Autoencoder::from_params(cfg.clone(), p.to_vec())?.reconstruct(&x)?;
                Ok(y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum())
            };
            let (y, tr) = ae.forward_traced(&x)?;
            let g_out: Vec<f64> = y.iter().zip(&x).map(|(a, b)| 2.0 * (a - b)).collect();
            let g = ae.backward_traced(&tr, &g_out);
            let err = fd_error(ae.params(), &g, (0..g.len()).step_by(5), loss)?;
            Ok((err < 1e-4, format!("max rel err {err:.2e}")))
        },
    ));
    out.push(check("RVQ bitrate arithmetic", || {
        let book = |k: usize| Codebook::new(1, (0..k).map(|i| i as f64).collect());
        let q3 = Rvq::new(vec![book(1024)?, book(1024)?, book(1024)?])?;
        let q6 = Rvq::new((0..6).map(|_| book(1024)).collect::<Result<_, _>>()?)?;
        let (a, b) = (bitrate(&q3, 50.0), bitrate(&q6, 50.0));
        Ok((a == 1500.0 && b == 3000.0, format!("{a} bps, {b} bps")))
    }));
    out
}
