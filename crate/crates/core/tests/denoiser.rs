use dequant_core::codec::{scale_frames, ConditionTensor};
use dequant_core::denoiser::*;
use dequant_core::diffusion::{training_loss, Denoiser};
use dequant_core::layers::{
    conv1d, conv1d_backward, conv_transpose1d, conv_transpose1d_backward, Activation, ConvGeom,
};
use dequant_core::optim::AdamConfig;
use dequant_core::schedule::NoiseSchedule;
use dequant_core::tensor::{Shape, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor so that near-zero gradients are
/// judged on absolute agreement.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Max relative error between `analytic` and central differences of `f`
/// around `params`.
fn fd_check(params: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = f(&p);
        p[i] = orig - FD_STEP;
        let down = f(&p);
        p[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn dot(a: &Tensor2<f64>, b: &Tensor2<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

#[test]
fn oracle_matches_quadrature() {
    let (mu, sigma, ab, xt) = (1.0f64, 0.5f64, 0.5f64, 1.0f64);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    // E[eps | x_t] = ∫ (x_t - a x0)/b p(x0) p(x_t | x0) dx0 / ∫ p(x0) p(x_t | x0) dx0
    let n = 20_000;
    let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let dx = (hi - lo) / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x0 = lo + i as f64 * dx;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = (-0.5 * ((x0 - mu) / sigma).powi(2) - 0.5 * ((xt - a * x0) / b).powi(2)).exp();
        num += w * p * (xt - a * x0) / b;
        den += w * p;
    }
    let want = num / den;
    let got = GaussianOracle::new(mu, sigma)
        .unwrap()
        .predict_scalar(xt, a);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn oracle_standard_normal_collapses() {
    let d = GaussianOracle::new(0.0, 1.0).unwrap();
    for ab in [0.01f64, 0.3, 0.9] {
        for x in [-2.0, 0.5, 3.0] {
            let got = d.predict_scalar(x, ab.sqrt());
            assert!((got - (1.0 - ab).sqrt() * x).abs() < 1e-14);
        }
    }
    assert!(GaussianOracle::new(0.0, 0.0).is_err());
    assert!(GaussianOracle::new(0.0, -1.0).is_err());
}

/// Straight-line reimplementation of the denoiser forward pass on its flat
/// parameter vector.
fn reference_forward(
    spec: &ConvDenoiserSpec,
    p: &[f64],
    x: &Tensor2<f64>,
    sab: f64,
    h: &ConditionTensor<f64>,
) -> Vec<Vec<f64>> {
    let frames = x.frames();
    let mut cur: Vec<Vec<f64>> = (0..x.channels()).map(|c| x.row(c).to_vec()).collect();
    cur.extend((0..h.channels()).map(|c| h.values().row(c).to_vec()));
    if spec.range_channels {
        cur.push(h.frame_ranges().iter().map(|r| r.0).collect());
        cur.push(h.frame_ranges().iter().map(|r| r.1).collect());
    }
    let nf = spec.time_features;
    let mut emb = vec![0.0; nf];
    for j in 0..nf / 2 {
        let w = std::f64::consts::PI * 2f64.powi(j as i32);
        emb[2 * j] = (w * sab).sin();
        emb[2 * j + 1] = (w * sab).cos();
    }
    let k = spec.kernel;
    let pad = (k - 1) / 2;
    let conv = |inp: &Vec<Vec<f64>>, out_ch: usize, off: &mut usize| -> Vec<Vec<f64>> {
        let in_ch = inp.len();
        let w = &p[*off..*off + out_ch * in_ch * k];
        let b = &p[*off + out_ch * in_ch * k..*off + out_ch * in_ch * k + out_ch];
        *off += out_ch * in_ch * k + out_ch;
        let mut y = vec![vec![0.0; frames]; out_ch];
        for o in 0..out_ch {
            for f in 0..frames {
                let mut acc = b[o];
                for i in 0..in_ch {
                    for kk in 0..k {
                        let src = f as isize + kk as isize - pad as isize;
                        if src >= 0 && (src as usize) < frames {
                            acc += w[(o * in_ch + i) * k + kk] * inp[i][src as usize];
                        }
                    }
                }
                y[o][f] = acc;
            }
        }
        y
    };
    let mut off = 0;
    for &width in &spec.hidden {
        let mut a = conv(&cur, width, &mut off);
        for o in 0..width {
            let shift: f64 = (0..nf).map(|j| p[off + o * nf + j] * emb[j]).sum();
            a[o].iter_mut().for_each(|v| *v += shift);
        }
        off += width * nf;
        let mut next: Vec<Vec<f64>> = a
            .iter()
            .map(|r| r.iter().map(|&v| spec.activation.apply(v)).collect())
            .collect();
        if cur.len() == width {
            for (n, c) in next.iter_mut().zip(&cur) {
                n.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
        }
        cur = next;
    }
    let out = conv(&cur, spec.latent_channels, &mut off);
    assert_eq!(off, p.len());
    out
}

fn random_params(spec: &ConvDenoiserSpec, seed: u64) -> ConvDenoiser<f64> {
    let mut m = ConvDenoiser::init(spec.clone(), seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    for v in m.params_mut() {
        *v = r.random_range(-0.5..0.5);
    }
    m
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut spec = ConvDenoiserSpec::new(3, 2);
    for (seed, hidden, kernel, ranges) in [
        (1, vec![16, 32, 32], 3, false),
        (2, vec![5, 5], 5, true),
        (3, vec![], 1, false),
    ] {
        spec.hidden = hidden;
        spec.kernel = kernel;
        spec.range_channels = ranges;
        let m = random_params(&spec, seed);
        let mut r = rng(seed);
        let x = Tensor2::randn(Shape::new(3, 7), &mut r);
        let raw = Tensor2::randn(Shape::new(2, 7), &mut r);
        let h = scale_frames(&raw);
        let got = m.predict(&x, 0.37, &h).unwrap();
        let want = reference_forward(&spec, m.params(), &x, 0.37, &h);
        for c in 0..3 {
            for f in 0..7 {
                assert!((got.get(c, f) - want[c][f]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_is_deterministic_and_checks_frames() {
    let m = ConvDenoiser::<f64>::init(ConvDenoiserSpec::new(2, 2), 0).unwrap();
    let x = Tensor2::randn(Shape::new(2, 9), &mut rng(0));
    let h = scale_frames(&Tensor2::randn(Shape::new(2, 9), &mut rng(1)));
    assert_eq!(
        m.predict(&x, 0.5, &h).unwrap(),
        m.predict(&x, 0.5, &h).unwrap()
    );
    let short = scale_frames(&Tensor2::randn(Shape::new(2, 8), &mut rng(1)));
    assert!(m.predict(&x, 0.5, &short).is_err());
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let configs: [(Vec<usize>, usize, Activation, bool); 3] = [
        (vec![16, 32, 32], 3, Activation::Softplus, false),
        (vec![6, 6], 5, Activation::Softplus, true),
        (vec![4], 1, Activation::Identity, false),
    ];
    for (hidden, kernel, act, ranges) in configs {
        for seed in 0..5u64 {
            let mut spec = ConvDenoiserSpec::new(2, 3);
            spec.hidden = hidden.clone();
            spec.kernel = kernel;
            spec.activation = act;
            spec.range_channels = ranges;
            let m = ConvDenoiser::<f64>::init(spec.clone(), seed).unwrap();
            let mut r = rng(100 + seed);
            let x = Tensor2::randn(Shape::new(2, 6), &mut r);
            let h = scale_frames(&Tensor2::randn(Shape::new(3, 6), &mut r));
            let probe = Tensor2::randn(Shape::new(2, 6), &mut r);
            let sab = r.random_range(0.05..0.99);
            let (_, trace) = m.forward_traced(&x, sab, &h).unwrap();
            let grad = m.backward_traced(&trace, &probe);
            let worst = fd_check(m.params(), &grad, |p| {
                let mm = ConvDenoiser::from_params(spec.clone(), p.to_vec()).unwrap();
                dot(&mm.predict(&x, sab, &h).unwrap(), &probe)
            });
            assert!(worst < FD_TOL, "{hidden:?} k={kernel} seed {seed}: {worst}");
        }
    }
}

#[test]
fn mse_gradient_through_cached_pass() {
    let spec = ConvDenoiserSpec::new(2, 1);
    let mut m = ConvDenoiser::<f64>::init(spec.clone(), 4).unwrap();
    let mut r = rng(4);
    let x = Tensor2::randn(Shape::new(2, 5), &mut r);
    let eps = Tensor2::randn(Shape::new(2, 5), &mut r);
    let h = scale_frames(&Tensor2::randn(Shape::new(1, 5), &mut r));
    let pred = m.forward_train(&x, 0.6, &h).unwrap();
    let n = pred.shape().len() as f64;
    let g_out = pred.zip_with(&eps, |p, e| 2.0 * (p - e) / n).unwrap();
    let grad = m.backward(&g_out).unwrap();
    let worst = fd_check(m.params(), &grad, |p| {
        let mm = ConvDenoiser::from_params(spec.clone(), p.to_vec()).unwrap();
        mm.predict(&x, 0.6, &h)
            .unwrap()
            .zip_with(&eps, |a, b| a - b)
            .unwrap()
            .mean_square()
    });
    assert!(worst < FD_TOL, "{worst}");
    assert!(m.backward(&g_out).is_err());

    // Zero loss at a point where the prediction equals the target.
    m.forward_train(&x, 0.6, &h).unwrap();
    let zero = Tensor2::zeros(pred.shape());
    assert!(m.backward(&zero).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn conv_layer_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut r = rng(seed);
        for (kernel, stride, pad) in [(3, 1, 1), (4, 2, 1), (10, 5, 2), (16, 8, 4), (1, 1, 0)] {
            let g = ConvGeom {
                in_ch: 2,
                out_ch: 3,
                kernel,
                stride,
                pad,
            };
            // Strided convolution.
            let in_len = 4 * stride + 3;
            let out_len = (in_len + 2 * pad - kernel) / stride + 1;
            let x = Tensor2::randn(Shape::new(2, in_len), &mut r);
            let w: Vec<f64> = (0..g.weight_len())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            let b: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let probe = Tensor2::randn(Shape::new(3, out_len), &mut r);
            let (dx, dw, db) = conv1d_backward(&x, &w, &g, &probe);
            let f =
                |x: &Tensor2<f64>, w: &[f64], b: &[f64]| dot(&conv1d(x, w, b, &g, out_len), &probe);
            assert!(fd_check(&w, &dw, |w| f(&x, w, &b)) < FD_TOL);
            assert!(fd_check(&b, &db, |b| f(&x, &w, b)) < FD_TOL);
            assert!(
                fd_check(x.as_slice(), dx.as_slice(), |xs| {
                    f(&Tensor2::from_vec(x.shape(), xs.to_vec()).unwrap(), &w, &b)
                }) < FD_TOL
            );

            // Transposed convolution with the mirrored geometry.
            let tg = ConvGeom {
                in_ch: 3,
                out_ch: 2,
                kernel,
                stride,
                pad,
            };
            let frames = 5;
            let out_len = frames * stride;
            let z = Tensor2::randn(Shape::new(3, frames), &mut r);
            let wt: Vec<f64> = (0..tg.weight_len())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            let bt: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            let probe = Tensor2::randn(Shape::new(2, out_len), &mut r);
            let (dz, dw, db) = conv_transpose1d_backward(&z, &wt, &tg, &probe);
            let f = |z: &Tensor2<f64>, w: &[f64], b: &[f64]| {
                dot(&conv_transpose1d(z, w, b, &tg, out_len), &probe)
            };
            assert!(fd_check(&wt, &dw, |w| f(&z, w, &bt)) < FD_TOL);
            assert!(fd_check(&bt, &db, |b| f(&z, &wt, b)) < FD_TOL);
            assert!(
                fd_check(z.as_slice(), dz.as_slice(), |zs| {
                    f(
                        &Tensor2::from_vec(z.shape(), zs.to_vec()).unwrap(),
                        &wt,
                        &bt,
                    )
                }) < FD_TOL
            );
        }
    }
}

fn harmonic_latents(n: usize, channels: usize, frames: usize, seed: u64) -> Vec<Tensor2<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut z = Tensor2::zeros(Shape::new(channels, frames));
            let period = r.random_range(6.0..14.0);
            let amp = r.random_range(0.5..1.5);
            for c in 0..channels {
                let phase = r.random_range(0.0..std::f64::consts::TAU);
                for f in 0..frames {
                    let arg = std::f64::consts::TAU * f as f64 * (c + 1) as f64 / period + phase;
                    z.set(c, f, amp * arg.sin() / (c + 1) as f64);
                }
            }
            z
        })
        .collect()
}

fn smoothed(trace: &[f64], n: usize) -> (f64, f64) {
    let head = trace[..n].iter().sum::<f64>() / n as f64;
    let tail = trace[trace.len() - n..].iter().sum::<f64>() / n as f64;
    (head, tail)
}

#[test]
fn training_on_harmonics_reduces_loss_and_uses_condition() {
    let data = harmonic_latents(16, 3, 32, 1);
    let conds: Vec<_> = data.iter().map(scale_frames).collect();
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut spec = ConvDenoiserSpec::new(3, 3);
    spec.hidden = vec![16, 16];
    let cfg = TrainConfig {
        batch_size: 8,
        adam: AdamConfig::default().with_learning_rate(2e-3),
        max_steps: 2000,
        seed: 3,
        crop_frames: Some(24),
    };
    let trained = train_denoiser(&data, &conds, &s, spec, &cfg).unwrap();
    assert_eq!(trained.loss_trace.len(), 2000);
    let (head, tail) = smoothed(&trained.loss_trace, 100);
    assert!(tail < 0.7 * head, "{head} -> {tail}");

    let m = &trained.model;
    let mut r = rng(77);
    let x = Tensor2::randn(Shape::new(3, 24), &mut r);
    let h = &conds[0].slice_frames(0, 24).unwrap();
    let base = m.predict(&x, 0.8, h).unwrap();
    for _ in 0..5 {
        let pert = scale_frames(&Tensor2::randn(Shape::new(3, 24), &mut r));
        let other = m.predict(&x, 0.8, &pert).unwrap();
        let diff = base.zip_with(&other, |a, b| a - b).unwrap().mean_square();
        assert!(diff > 0.0);
    }
}

#[test]
fn trained_scalar_denoiser_approaches_oracle() {
    let (mu, sigma) = (0.5, 0.5);
    let mut r = rng(9);
    let data: Vec<Tensor2<f64>> = (0..64)
        .map(|_| Tensor2::randn(Shape::new(1, 64), &mut r).map(|v| mu + sigma * v))
        .collect();
    let conds: Vec<_> = data
        .iter()
        .map(|z| ConditionTensor::empty(z.frames()))
        .collect();
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut spec = ConvDenoiserSpec::new(1, 0);
    spec.hidden = vec![32, 32];
    spec.kernel = 1;
    let cfg = TrainConfig {
        batch_size: 16,
        adam: AdamConfig::default().with_learning_rate(3e-3),
        max_steps: 3000,
        seed: 1,
        crop_frames: None,
    };
    let model = train_denoiser(&data, &conds, &s, spec, &cfg).unwrap().model;
    let oracle = GaussianOracle::new(mu, sigma).unwrap();

    let (mut lm, mut lo) = (0.0, 0.0);
    let mut r = rng(1234);
    let h = ConditionTensor::empty(256);
    for _ in 0..400 {
        let z0 = Tensor2::randn(Shape::new(1, 256), &mut r).map(|v| mu + sigma * v);
        let eps = Tensor2::randn(z0.shape(), &mut r);
        let t = r.random_range(0..1000);
        lm += training_loss(&s, &model, &z0, t, &h, &eps).unwrap();
        lo += training_loss(&s, &oracle, &z0, t, &h, &eps).unwrap();
    }
    assert!(lm <= 1.1 * lo, "model {lm} oracle {lo}");
}

#[test]
fn constant_dataset_loss_decreases() {
    let data = vec![Tensor2::<f64>::zeros(Shape::new(2, 16)); 4];
    let conds: Vec<_> = data
        .iter()
        .map(|z| ConditionTensor::empty(z.frames()))
        .collect();
    let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        adam: AdamConfig::default().with_learning_rate(3e-3),
        max_steps: 300,
        seed: 0,
        crop_frames: None,
    };
    let tr = train_denoiser(&data, &conds, &s, ConvDenoiserSpec::new(2, 0), &cfg).unwrap();
    let (head, tail) = smoothed(&tr.loss_trace, 30);
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn reference_defaults_run() {
    let cfg = TrainConfig {
        max_steps: 2,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.batch_size, 20);
    assert_eq!(cfg.adam.learning_rate, 5e-5);
    let data = harmonic_latents(2, 2, 8, 0);
    let conds: Vec<_> = data.iter().map(scale_frames).collect();
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let tr = train_denoiser(&data, &conds, &s, ConvDenoiserSpec::new(2, 2), &cfg).unwrap();
    assert_eq!(tr.loss_trace.len(), 2);
    assert!(train_denoiser(&[], &[], &s, ConvDenoiserSpec::new(2, 2), &cfg).is_err());
}

#[test]
fn f32_training_step_matches_f64_direction() {
    let data = harmonic_latents(4, 2, 16, 5);
    let conds: Vec<_> = data.iter().map(scale_frames).collect();
    let d32: Vec<Tensor2<f32>> = data.iter().map(|z| z.cast()).collect();
    let c32: Vec<ConditionTensor<f32>> = d32.iter().map(scale_frames).collect();
    let s64 = NoiseSchedule::<f64>::linear(100, 1e-4, 0.05).unwrap();
    let s32 = NoiseSchedule::<f32>::linear(100, 1e-4, 0.05).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        adam: AdamConfig::default().with_learning_rate(1e-3),
        max_steps: 20,
        seed: 2,
        crop_frames: None,
    };
    let a = train_denoiser(&data, &conds, &s64, ConvDenoiserSpec::new(2, 2), &cfg).unwrap();
    let b = train_denoiser(&d32, &c32, &s32, ConvDenoiserSpec::new(2, 2), &cfg).unwrap();
    for (x, y) in a.loss_trace.iter().zip(&b.loss_trace) {
        assert!((x - y).abs() < 1e-3 * x.max(1.0), "{x} vs {y}");
    }
}
