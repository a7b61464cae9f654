use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmarl_core::grid::LandmarkSet;
use sgmarl_core::oracle::fit::{jacobi_eigen, joint_fit, reconstruct};
use sgmarl_core::shape::io::{decode_model, encode_model};
use sgmarl_core::shape::{
    build_ssm, fit, generalized_procrustes, normalize, sample, synthesize, AffineJitter, AffineTransform, FitConfig,
    ShapeModel,
};
use sgmarl_core::Error;

const J: usize = 12;

fn base_shape() -> Vec<f64> {
    (0..J)
        .flat_map(|j| {
            let t = j as f64 / J as f64 * std::f64::consts::TAU;
            let r = 20.0 + 4.0 * (2.0 * t).cos() + 2.0 * (3.0 * t).sin();
            [32.0 + r * t.cos(), 32.0 + 0.8 * r * t.sin()]
        })
        .collect()
}

/// Smooth, non-affine radial bumps.
fn deformation(mode: usize, j: usize) -> [f64; 2] {
    let t = j as f64 / J as f64 * std::f64::consts::TAU;
    let w = ((mode + 3) as f64 * t + mode as f64).sin();
    [w * t.cos(), w * t.sin()]
}

fn random_similarity(rng: &mut ChaCha8Rng, flat: &[f64]) -> Vec<f64> {
    let ang = rng.random_range(-0.3..0.3);
    let s = rng.random_range(0.8..1.2);
    let (tx, ty) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let (sn, cs) = f64::sin_cos(ang);
    flat.chunks(2).flat_map(|p| [s * (cs * p[0] - sn * p[1]) + tx, s * (sn * p[0] + cs * p[1]) + ty]).collect()
}

fn library(n: usize, seed: u64) -> Vec<LandmarkSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = base_shape();
    (0..n)
        .map(|_| {
            let w: Vec<f64> = [3.0, 2.0, 1.0].iter().map(|s| s * rng.random_range(-1.0..1.0)).collect();
            let mut flat = base.clone();
            for j in 0..J {
                for (m, wm) in w.iter().enumerate() {
                    let d = deformation(m, j);
                    flat[2 * j] += wm * d[0];
                    flat[2 * j + 1] += wm * d[1];
                }
            }
            LandmarkSet::complete(2, random_similarity(&mut rng, &flat)).unwrap()
        })
        .collect()
}

fn model3() -> ShapeModel {
    build_ssm(&library(60, 7), 3).unwrap()
}

fn random_params(model: &ShapeModel, rng: &mut ChaCha8Rng) -> (AffineTransform, Vec<f64>) {
    let s = rng.random_range(20.0..40.0);
    let a = AffineTransform::from_params(
        2,
        vec![
            s * rng.random_range(0.8..1.2),
            s * rng.random_range(-0.3..0.3),
            s * rng.random_range(-0.3..0.3),
            s * rng.random_range(0.8..1.2),
            rng.random_range(20.0..40.0),
            rng.random_range(20.0..40.0),
        ],
    )
    .unwrap();
    let b = model.variances().iter().map(|v| 2.0 * v.sqrt() * rng.random_range(-1.0..1.0)).collect();
    (a, b)
}

fn modes_as_columns(model: &ShapeModel) -> Vec<Vec<f64>> {
    (0..model.mode_count()).map(|c| model.modes().column(c).iter().copied().collect()).collect()
}

fn rms(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let n = a.len() / dim;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}

#[test]
fn identical_shapes_have_zero_variance() {
    let s = LandmarkSet::complete(2, base_shape()).unwrap();
    let model = build_ssm(&vec![s.clone(); 5], 2).unwrap();
    assert!(model.variances().iter().all(|&v| v.abs() < 1e-10));
    let want = normalize(s.coords(), 2).unwrap();
    assert!(rms(model.mean(), &want, 2) < 1e-10);
}

#[test]
fn triangle_modes_match_dense_eigendecomposition() {
    let tris: Vec<LandmarkSet> = [
        vec![0.0, 0.0, 4.0, 0.0, 1.0, 3.0],
        vec![1.0, 1.0, 5.5, 1.2, 2.0, 4.5],
        vec![-2.0, 0.0, 1.0, -0.5, -1.0, 3.5],
    ]
    .into_iter()
    .map(|c| LandmarkSet::complete(2, c).unwrap())
    .collect();
    let model = build_ssm(&tris, 1).unwrap();
    let aligned = generalized_procrustes(&tris).unwrap();
    let mean: Vec<f64> = (0..6).map(|i| aligned.iter().map(|s| s[i]).sum::<f64>() / 3.0).collect();
    let cov: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| aligned.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).sum::<f64>() / 2.0).collect())
        .collect();
    let (values, vectors) = jacobi_eigen(&cov);
    assert!((model.variances()[0] - values[0]).abs() < 1e-12 * values[0].max(1.0));
    let mode: Vec<f64> = model.modes().column(0).iter().copied().collect();
    let dot: f64 = mode.iter().zip(&vectors[0]).map(|(a, b)| a * b).sum();
    assert!((dot.abs() - 1.0).abs() < 1e-9, "mode alignment {dot}");
    assert!(rms(model.mean(), &mean, 2) < 1e-12);
}

#[test]
fn build_rejects_bad_libraries() {
    let mut lib = library(5, 1);
    assert!(matches!(build_ssm(&lib, 5), Err(Error::Argument(_))));
    assert!(matches!(build_ssm(&lib[..1], 0), Err(Error::Argument(_))));
    lib[2].set_available(0, false);
    assert!(matches!(build_ssm(&lib, 2), Err(Error::Argument(_))));
}

#[test]
fn procrustes_invariance_under_a_global_similarity() {
    let lib = library(30, 3);
    let moved: Vec<LandmarkSet> = {
        let ang: f64 = 1.1;
        let (sn, cs) = ang.sin_cos();
        lib.iter()
            .map(|s| {
                let c: Vec<f64> =
                    s.coords().chunks(2).flat_map(|p| [2.5 * (cs * p[0] - sn * p[1]) - 7.0, 2.5 * (sn * p[0] + cs * p[1]) + 3.0]).collect();
                LandmarkSet::complete(2, c).unwrap()
            })
            .collect()
    };
    let m1 = build_ssm(&lib, 4).unwrap();
    let m2 = build_ssm(&moved, 4).unwrap();
    for (a, b) in m1.variances().iter().zip(m2.variances()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{a} vs {b}");
    }
    // The means agree once rotated onto each other.
    let r = sgmarl_core::shape::optimal_rotation(m2.mean(), m1.mean(), 2);
    let m = DMatrix::from_row_slice(J, 2, m2.mean()) * r;
    let rotated: Vec<f64> = (0..J).flat_map(|i| [m[(i, 0)], m[(i, 1)]]).collect();
    assert!(rms(&rotated, m1.mean(), 2) < 1e-9);
}

#[test]
fn synthesize_examples() {
    let model = model3();
    let mean = synthesize(&model, &AffineTransform::identity(2), &[0.0; 3]).unwrap();
    assert_eq!(mean.coords(), model.mean());
    let sd = model.variances()[0].sqrt();
    let moved = synthesize(&model, &AffineTransform::identity(2), &[sd, 0.0, 0.0]).unwrap();
    for i in 0..2 * J {
        assert!((moved.coords()[i] - model.mean()[i] - sd * model.modes()[(i, 0)]).abs() < 1e-15);
    }
    assert!(synthesize(&model, &AffineTransform::identity(2), &[0.0; 2]).is_err());
}

#[test]
fn fit_of_the_mean_is_the_identity() {
    let model = model3();
    let mean = LandmarkSet::complete(2, model.mean().to_vec()).unwrap();
    let r = fit(&model, &mean, &FitConfig::default()).unwrap();
    for (p, q) in r.a.params().iter().zip(AffineTransform::identity(2).params()) {
        assert!((p - q).abs() < 1e-12);
    }
    assert!(r.b.iter().all(|b| b.abs() < 1e-12));
    assert!(r.residual < 1e-12);
}

#[test]
fn fit_recovers_synthesized_shapes() {
    let model = model3();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (a, b) = random_params(&model, &mut rng);
        let x = synthesize(&model, &a, &b).unwrap();
        let r = fit(&model, &x, &FitConfig::default()).unwrap();
        assert!(r.residual < 1e-5, "residual {}", r.residual);
        let rec = synthesize(&model, &r.a, &r.b).unwrap();
        assert!(rms(rec.coords(), x.coords(), 2) < 1e-5);
    }
}

#[test]
fn masked_fit_matches_joint_dense_least_squares() {
    let model = model3();
    let cols = modes_as_columns(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let (a, b) = random_params(&model, &mut rng);
        let mut x = synthesize(&model, &a, &b).unwrap();
        let truth = x.clone();
        let mut idx: Vec<usize> = (0..J).collect();
        for i in (1..J).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for &j in &idx[..J / 2] {
            x.set_available(j, false);
        }
        let r = fit(&model, &x, &FitConfig::default()).unwrap();
        assert!(r.residual < 1e-4, "masked residual {}", r.residual);
        let rec = synthesize(&model, &r.a, &r.b).unwrap();
        let err = rms(rec.coords(), truth.coords(), 2);
        assert!(err < 1e-2 * truth.diameter(), "reconstruction error {err}");
        let (oa, ob, ores) = joint_fit(2, model.mean(), &cols, x.coords(), x.availability());
        let oracle = reconstruct(2, model.mean(), &cols, &oa, &ob);
        assert!(ores < 1e-4);
        assert!(rms(&oracle, rec.coords(), 2) < 1e-2 * truth.diameter());
    }
}

#[test]
fn fit_is_idempotent_and_monotone() {
    let model = model3();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (a, b) = random_params(&model, &mut rng);
        let mut x = synthesize(&model, &a, &b).unwrap();
        // Perturb so the fit does not match exactly.
        let mut c = x.coords().to_vec();
        for v in c.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
        x = LandmarkSet::complete(2, c).unwrap();
        let r = fit(&model, &x, &FitConfig::default()).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.history);
        let rec = synthesize(&model, &r.a, &r.b).unwrap();
        let again = fit(&model, &rec, &FitConfig::default()).unwrap();
        let rec2 = synthesize(&model, &again.a, &again.b).unwrap();
        assert!(rms(rec.coords(), rec2.coords(), 2) < 1e-6);
        for (p, q) in again.a.params().iter().zip(r.a.params()) {
            assert!((p - q).abs() < 1e-6 * (1.0 + q.abs()), "{p} vs {q}");
        }
        for (p, q) in again.b.iter().zip(&r.b) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }
}

#[test]
fn clamped_fit_respects_three_sigma() {
    let model = model3();
    let sd: Vec<f64> = model.variances().iter().map(|v| v.sqrt()).collect();
    let x = synthesize(&model, &AffineTransform::identity(2), &[6.0 * sd[0], -5.0 * sd[1], 0.0]).unwrap();
    let r = fit(&model, &x, &FitConfig::clamped()).unwrap();
    for (b, s) in r.b.iter().zip(&sd) {
        assert!(b.abs() <= 3.0 * s + 1e-12);
    }
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn degenerate_available_set_is_reported() {
    let model = model3();
    let x = synthesize(&model, &AffineTransform::identity(2), &[0.0; 3]).unwrap();
    let mut few = x.clone();
    for j in 2..J {
        few.set_available(j, false);
    }
    let err = fit(&model, &few, &FitConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Fit(_)));
    // Three model points on one line cannot pin a 2D affine map.
    let collinear = ShapeModel::new(
        2,
        vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 0.0, 1.0],
        DMatrix::zeros(8, 0),
        vec![],
    )
    .unwrap();
    let target = LandmarkSet::new(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 5.0, 5.0], vec![true, true, true, false]).unwrap();
    match fit(&collinear, &target, &FitConfig::default()) {
        Err(Error::Fit(msg)) => assert!(msg.contains("rank"), "{msg}"),
        other => panic!("expected a rank error, got {other:?}"),
    }
}

#[test]
fn sampling_matches_model_variances() {
    let model = model3();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let mut sums = vec![0.0; 3];
    for _ in 0..n {
        let s = sample(&model, &mut rng, &AffineJitter::none()).unwrap();
        assert_eq!(s.a, AffineTransform::identity(2));
        for (acc, b) in sums.iter_mut().zip(&s.b) {
            *acc += b * b;
        }
    }
    for (acc, v) in sums.iter().zip(model.variances()) {
        let emp = acc / n as f64;
        assert!((emp - v).abs() < 0.1 * v, "sample variance {emp} vs {v}");
    }
}

#[test]
fn samples_round_trip_through_fit() {
    let model = model3();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let jitter = AffineJitter { matrix: 0.2, translation: 0.5 };
    for _ in 0..200 {
        let s = sample(&model, &mut rng, &jitter).unwrap();
        let r = fit(&model, &s.shape, &FitConfig::default()).unwrap();
        assert!(r.residual < 1e-4);
    }
    assert!(sample(&model, &mut rng, &AffineJitter { matrix: -1.0, translation: 0.0 }).is_err());
}

#[test]
fn model_file_round_trips() {
    let model = model3();
    let bytes = encode_model(&model);
    assert_eq!(decode_model(&bytes).unwrap(), model);
    assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_model(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn modes_are_orthonormal(n in 3usize..20, k in 0usize..3, seed in 0u64..1000) {
        let model = build_ssm(&library(n, seed), k.min(n - 1)).unwrap();
        let ptp = model.modes().transpose() * model.modes();
        let eye = DMatrix::<f64>::identity(ptp.nrows(), ptp.ncols());
        prop_assert!((ptp - eye).amax() < 1e-5);
        prop_assert!(model.variances().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_mask_mode_step_is_the_orthonormal_projection(seed in 0u64..1000) {
        let model = model3();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = model.variances().iter().map(|v| v.sqrt() * rng.random_range(-2.0..2.0)).collect();
        let x = synthesize(&model, &AffineTransform::identity(2), &b).unwrap();
        let proj: Vec<f64> = (0..3)
            .map(|c| (0..2 * J).map(|i| model.modes()[(i, c)] * (x.coords()[i] - model.mean()[i])).sum())
            .collect();
        for (p, q) in proj.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }
}
