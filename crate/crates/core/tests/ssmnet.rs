use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmarl_core::grid::{distance, LandmarkSet};
use sgmarl_core::nn::{checkpoint, Params, Tensor};
use sgmarl_core::shape::{build_ssm, fit, sample, synthesize, AffineJitter, AffineTransform, FitConfig, ShapeModel};
use sgmarl_core::ssmnet::{
    regularize, ClosedFormFit, DeepSsmNet, PretrainSchedule, Provenance, RegularizerConfig, ShapeLibrary,
    ShapeRegressor,
};
use sgmarl_core::{oracle, Error};

const J: usize = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn library(n: usize, seed: u64) -> Vec<LandmarkSet> {
    library_of(n, seed, J)
}

fn library_of(n: usize, seed: u64, landmarks: usize) -> Vec<LandmarkSet> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let w: Vec<f64> = [3.0, 2.0, 1.0].iter().map(|s| s * r.random_range(-1.0..1.0)).collect();
            let ang: f64 = r.random_range(-0.2..0.2);
            let s = r.random_range(0.9..1.1);
            let flat: Vec<f64> = (0..landmarks)
                .flat_map(|j| {
                    let t = j as f64 / landmarks as f64 * std::f64::consts::TAU;
                    let bump: f64 = w.iter().enumerate().map(|(m, wm)| wm * ((m + 2) as f64 * t + m as f64).sin()).sum();
                    let rad = 20.0 + 3.0 * (2.0 * t).cos() + bump;
                    let (x, y) = (rad * t.cos(), 0.8 * rad * t.sin());
                    let (sn, cs) = ang.sin_cos();
                    [32.0 + s * (cs * x - sn * y), 32.0 + s * (sn * x + cs * y)]
                })
                .collect();
            LandmarkSet::complete(2, flat).unwrap()
        })
        .collect()
}

fn model3() -> ShapeModel {
    build_ssm(&library(60, 1), 3).unwrap()
}

/// Similarity of scale 20 about (32, 32) with a small rotation.
fn image_pose(angle: f64) -> AffineTransform {
    let (s, c) = angle.sin_cos();
    AffineTransform::from_params(2, vec![20.0 * c, -20.0 * s, 20.0 * s, 20.0 * c, 32.0, 30.0]).unwrap()
}

fn zero_net(model: &ShapeModel, hidden: &[usize]) -> DeepSsmNet {
    let spec = DeepSsmNet::spec_for(model, hidden);
    let params = Params::zeros_like_spec(&spec).unwrap();
    DeepSsmNet::from_params(model.clone(), spec, params).unwrap()
}

#[test]
fn output_width_is_pose_plus_modes() {
    let m = model3();
    assert_eq!(DeepSsmNet::output_len(&m), 6 + 3);
    let lib3: Vec<LandmarkSet> = (0..8)
        .map(|i| {
            let f = i as f64;
            LandmarkSet::complete(3, vec![0.0, 0.0, 0.0, 1.0 + 0.1 * f, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0 - 0.05 * f, 0.3, 0.2 * f, 0.1])
                .unwrap()
        })
        .collect();
    let m3 = build_ssm(&lib3, 2).unwrap();
    assert_eq!(DeepSsmNet::output_len(&m3), 12 + 2);
}

#[test]
fn zero_weights_collapse_every_point() {
    let m = model3();
    let net = zero_net(&m, &[16]);
    let x = &library(1, 2)[0];
    let p = net.predict(x).unwrap();
    assert!(p.a.params()[..4].iter().all(|&v| v == 0.0));
    assert!(p.b.iter().all(|&v| v == 0.0));
    let t = p.a.translation().to_vec();
    for q in p.reconstruction.points() {
        assert_eq!(q, t.as_slice());
    }
}

#[test]
fn prediction_is_pure() {
    let m = model3();
    let net = DeepSsmNet::new(m, &[16, 16], &mut rng(3)).unwrap();
    let x = &library(1, 4)[0];
    assert_eq!(net.predict(x).unwrap(), net.predict(x).unwrap());
    let incomplete = LandmarkSet::new(2, x.coords().to_vec(), (0..J).map(|j| j != 3).collect()).unwrap();
    assert!(matches!(net.predict(&incomplete), Err(Error::Argument(_))));
}

#[test]
fn identity_output_reconstructs_the_mean_exactly() {
    let m = model3();
    let mut net = zero_net(&m, &[8]);
    let last = net.spec().layers.len() - 1;
    let mut bias = vec![0f32; 9];
    bias[0] = 1.0;
    bias[3] = 1.0;
    net.params_mut().insert(format!("l{last:02}.b"), Tensor::new(vec![9], bias).unwrap());
    let mean = LandmarkSet::complete(2, m.mean().to_vec()).unwrap();
    let (loss, _) = net.joint_update(&[&mean]).unwrap();
    assert!(loss < 1e-20, "{loss}");
    assert!(matches!(net.joint_update(&[]), Err(Error::Usage(_))));
}

#[test]
fn joint_loss_matches_recomputed_residuals_and_ignores_order() {
    let m = model3();
    let net = DeepSsmNet::new(m, &[16], &mut rng(5)).unwrap();
    let shapes = library(6, 6);
    let refs: Vec<&LandmarkSet> = shapes.iter().collect();
    let (loss, grads) = net.joint_update(&refs).unwrap();
    let expected: f64 = shapes
        .iter()
        .map(|x| {
            let rec = net.predict(x).unwrap().reconstruction;
            x.coords().iter().zip(rec.coords()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    assert!((loss - expected).abs() <= 1e-9 * expected.max(1.0));
    let rev: Vec<&LandmarkSet> = shapes.iter().rev().collect();
    let (loss_rev, grads_rev) = net.joint_update(&rev).unwrap();
    assert!((loss - loss_rev).abs() <= 1e-9 * loss.max(1.0));
    for (name, g) in grads.iter() {
        for (a, b) in g.data().iter().zip(grads_rev.get(name).unwrap().data()) {
            assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-3));
        }
    }
}

#[test]
fn joint_gradients_match_finite_differences() {
    let m = model3();
    let net = DeepSsmNet::new(m.clone(), &[8], &mut rng(7)).unwrap();
    let shapes = library(3, 8);
    let refs: Vec<&LandmarkSet> = shapes.iter().collect();
    let (_, grads) = net.joint_update(&refs).unwrap();
    let spec = net.spec().clone();
    let modes: Vec<Vec<f64>> = (0..3).map(|k| m.modes().column(k).iter().copied().collect()).collect();
    let sigma: Vec<f64> = m.variances().iter().map(|v| v.sqrt()).collect();
    let mean_c: Vec<f64> = {
        let n = J as f64;
        let cx = m.mean().chunks(2).map(|p| p[0]).sum::<f64>() / n;
        let cy = m.mean().chunks(2).map(|p| p[1]).sum::<f64>() / n;
        vec![cx, cy]
    };
    let kappa = (m.mean().chunks(2).map(|p| (p[0] - mean_c[0]).powi(2) + (p[1] - mean_c[1]).powi(2)).sum::<f64>() / J as f64).sqrt();
    // Independent 64-bit recomputation of the summed squared reconstruction error.
    let loss = |p: &Params| -> f64 {
        shapes
            .iter()
            .map(|x| {
                let c = x.centroid();
                let s = (x.points().map(|q| distance(q, &c).powi(2)).sum::<f64>() / J as f64).sqrt();
                let input: Vec<f64> = x.points().flat_map(|q| [(q[0] - c[0]) / s, (q[1] - c[1]) / s]).collect();
                let out = oracle::reference_forward(&spec, p, &input);
                let lam = s / kappa;
                let a: Vec<f64> = (0..6).map(|i| if i < 4 { lam * out[i] } else { lam * out[i] + c[i - 4] }).collect();
                let b: Vec<f64> = (0..3).map(|k| sigma[k] * out[6 + k]).collect();
                let rec = oracle::fit::reconstruct(2, m.mean(), &modes, &a, &b);
                rec.iter().zip(x.coords()).map(|(r, t)| (r - t).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let mut picks = Vec::new();
    for name in net.params().names() {
        for i in 0..net.params().get(name).unwrap().len() {
            picks.push((name.to_string(), i));
        }
    }
    let (ok, total) = oracle::finite_difference_agreement(net.params(), &picks, 1e-3, 1e-3, 1e-3, loss, |n, i| {
        grads.get(n).unwrap().data()[i] as f64
    });
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

#[test]
fn pretraining_without_samples_changes_nothing() {
    let m = model3();
    let mut net = DeepSsmNet::new(m, &[16], &mut rng(9)).unwrap();
    let before = checkpoint::encode(net.params());
    let mut lib = ShapeLibrary::new();
    let hist = net.pretrain(&mut lib, 0, &PretrainSchedule::default(), &mut rng(10)).unwrap();
    assert!(hist.is_empty() && lib.is_empty());
    assert_eq!(checkpoint::encode(net.params()), before);
}

#[test]
fn pretraining_learns_the_sampler() {
    let m = model3();
    let mut net = DeepSsmNet::new(m.clone(), &[128, 128], &mut rng(11)).unwrap();
    let mut lib = ShapeLibrary::new();
    for s in library(5, 12) {
        lib.push(s, Provenance::Construction).unwrap();
    }
    let schedule = PretrainSchedule { epochs: 40, ..PretrainSchedule::default() };
    net.pretrain(&mut lib, 5000, &schedule, &mut rng(13)).unwrap();
    assert_eq!(lib.len(), 5005);
    assert_eq!(lib.count(Provenance::Sampled), 5000);

    // Held-out parameter error against the variance of the sampled parameters.
    let mut r = rng(14);
    let held: Vec<_> = (0..500).map(|_| sample(&m, &mut r, &schedule.jitter).unwrap()).collect();
    let targets: Vec<Vec<f32>> = held.iter().map(|s| net.targets(&s.shape, &s.a, &s.b)).collect();
    let width = targets[0].len();
    let mut var = 0.0;
    for q in 0..width {
        let mu = targets.iter().map(|t| t[q] as f64).sum::<f64>() / targets.len() as f64;
        var += targets.iter().map(|t| (t[q] as f64 - mu).powi(2)).sum::<f64>() / targets.len() as f64;
    }
    let inputs: Vec<&LandmarkSet> = held.iter().map(|s| &s.shape).collect();
    let (mse, _) = net.regression_loss(&inputs, &targets).unwrap();
    let mse_total = mse * width as f64;
    assert!(mse_total < 0.1 * var, "held-out error {mse_total} vs variance {var}");

    // Image-scale reconstruction of a synthesized shape.
    let b0 = [0.5 * m.variances()[0].sqrt(), -0.4 * m.variances()[1].sqrt(), 0.3 * m.variances()[2].sqrt()];
    let x = synthesize(&m, &image_pose(0.05), &b0).unwrap();
    let p = net.predict(&x).unwrap();
    let rms = (x.points().zip(p.reconstruction.points()).map(|(a, b)| distance(a, b).powi(2)).sum::<f64>() / J as f64).sqrt();
    let oracle_fit = fit(&m, &x, &FitConfig::default()).unwrap();
    assert!(oracle_fit.residual < 1e-6);
    assert!(rms < 0.5, "reconstruction RMS {rms}");
    assert!(net.calibrate_threshold(&library(10, 15)).unwrap() > 0.0);
}

#[test]
fn library_csv_round_trip() {
    let mut lib = ShapeLibrary::new();
    let shapes = library(3, 16);
    lib.push(shapes[0].clone(), Provenance::Construction).unwrap();
    lib.push(shapes[1].clone(), Provenance::Sampled).unwrap();
    lib.push(shapes[2].clone(), Provenance::MaqPrediction).unwrap();
    let back = ShapeLibrary::from_csv(&lib.to_csv()).unwrap();
    assert_eq!(back, lib);
    let incomplete = LandmarkSet::new(2, shapes[0].coords().to_vec(), (0..J).map(|j| j > 0).collect()).unwrap();
    assert!(lib.push(incomplete, Provenance::Sampled).is_err());
    assert!(ShapeLibrary::from_csv("shape,origin,index,c0,c1\n").is_err());
}

fn closed_form() -> ClosedFormFit {
    ClosedFormFit { model: model3(), config: FitConfig::default() }
}

#[test]
fn reconstruction_fixed_point_is_untouched() {
    let reg = closed_form();
    let x = synthesize(&reg.model, &image_pose(0.1), &[1.0, -0.5, 0.2]).unwrap();
    let out = regularize(&reg, &x, &RegularizerConfig::new(0.5)).unwrap();
    assert_eq!(out.landmarks, x);
    assert!(out.subiterations.is_empty());
}

#[test]
fn single_outlier_is_pulled_back() {
    // A denser outline keeps the least-squares fit from absorbing the outlier.
    const N: usize = 24;
    let reg = ClosedFormFit { model: build_ssm(&library_of(60, 1, N), 2).unwrap(), config: FitConfig::default() };
    let clean = synthesize(&reg.model, &image_pose(0.0), &[0.5, 0.3]).unwrap();
    let mut x = clean.clone();
    let p = x.point(4).to_vec();
    x.set_point(4, &[p[0] + 12.0, p[1] - 9.0]);
    let config = RegularizerConfig::new(3.0);
    let out = regularize(&reg, &x, &config).unwrap();
    assert_eq!(out.subiterations[0].candidates, vec![4]);
    assert!(out.subiterations.len() <= config.max_subiterations);
    let rec = reg.reconstruct(&out.landmarks).unwrap();
    assert!(distance(out.landmarks.point(4), rec.point(4)) <= config.tau);
    assert!(distance(out.landmarks.point(4), clean.point(4)) < 2.0);
    for j in (0..N).filter(|&j| j != 4) {
        assert_eq!(out.landmarks.point(j), x.point(j));
    }
}

#[test]
fn configuration_is_validated() {
    assert!(RegularizerConfig::new(0.0).validate().is_err());
    assert!(RegularizerConfig { max_subiterations: 0, ..RegularizerConfig::new(1.0) }.validate().is_err());
    let reg = closed_form();
    let x = LandmarkSet::new(2, vec![0.0; 2 * J], vec![false; J]).unwrap();
    assert!(regularize(&reg, &x, &RegularizerConfig::new(1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn only_candidates_move(seed in 0u64..10_000, noise in 0.5f64..6.0, tau in 0.5f64..4.0) {
        let reg = closed_form();
        let mut r = rng(seed);
        let s = sample(&reg.model, &mut r, &AffineJitter { matrix: 0.2, translation: 0.0 }).unwrap();
        let a = image_pose(0.0).compose(&s.a);
        let clean = synthesize(&reg.model, &a, &s.b).unwrap();
        let noisy: Vec<f64> = clean.coords().iter().map(|c| c + noise * r.random_range(-1.0..1.0)).collect();
        let x = LandmarkSet::complete(2, noisy).unwrap();
        let config = RegularizerConfig::new(tau);
        let out = regularize(&reg, &x, &config).unwrap();
        prop_assert!(out.subiterations.len() <= config.max_subiterations);
        let mut moved = vec![false; J];
        for sub in &out.subiterations {
            for j in &sub.accepted {
                prop_assert!(sub.candidates.contains(j));
                moved[*j] = true;
            }
        }
        for j in 0..J {
            if !moved[j] {
                prop_assert_eq!(out.landmarks.point(j), x.point(j));
            }
        }
        // The first candidate set is exactly the landmarks beyond the threshold.
        let rec = reg.reconstruct(&x).unwrap();
        let beyond: Vec<usize> = (0..J).filter(|&j| distance(x.point(j), rec.point(j)) > tau).collect();
        let first = out.subiterations.first().map(|s| s.candidates.clone()).unwrap_or_default();
        prop_assert_eq!(first, beyond);
    }
}

#[test]
fn correction_limits_mode_weights_to_three_deviations() {
    let m = model3();
    let mut net = zero_net(&m, &[8]);
    let last = net.spec().layers.len() - 1;
    let bias = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 10.0, -1.0, -10.0];
    net.params_mut().insert(format!("l{last:02}.b"), Tensor::new(vec![9], bias).unwrap());
    let x = library(1, 40).pop().unwrap();
    let p = net.predict(&x).unwrap();
    let sigma: Vec<f64> = m.variances().iter().map(|v| v.sqrt()).collect();
    assert!((p.b[0] - 10.0 * sigma[0]).abs() < 1e-9 * sigma[0]);
    let limited: Vec<f64> = vec![3.0 * sigma[0], -sigma[1], -3.0 * sigma[2]];
    let expect = synthesize(&m, &p.a, &limited).unwrap();
    let got = net.reconstruct(&x).unwrap();
    for j in 0..J {
        assert!(distance(got.point(j), expect.point(j)) < 1e-9);
    }
}
