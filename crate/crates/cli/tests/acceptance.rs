//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any criterion fails.
//!
//! The learning criteria train full-size models on the body-outline phantoms, so this target
//! takes tens of minutes on a single core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use sgmarl::{Command, ExperimentConfig, Run};
use sgmarl_core::env::{Action, EnvConfig, Environment, Mode, Status};
use sgmarl_core::grid::io::load_landmarks;
use sgmarl_core::grid::phantom::{CardiacGeometry, PhantomFamily, PhantomSpec};
use sgmarl_core::grid::{distance, GridImage, LandmarkSet};
use sgmarl_core::maq::{QNetwork, ReplayMemory, Transition};
use sgmarl_core::metrics::{
    ade, asd, dice, hausdorff, labels, landmarks_to_seg, seg_to_landmarks, LabelMask, CARDIAC_LANDMARKS,
};
use sgmarl_core::nn::{opt_step, Activation, LayerSpec, NetSpec, OptimConfig, Params};
use sgmarl_core::oracle;
use sgmarl_core::shape::{build_ssm, fit, synthesize, AffineTransform, FitConfig, ShapeModel};
use sgmarl_core::ssmnet::DeepSsmNet;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took <= limit, format!("took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- shape fitting

const J: usize = 12;

fn toy_library(n: usize, seed: u64) -> Vec<LandmarkSet> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let w: Vec<f64> = [3.0, 2.0, 1.0].iter().map(|s| s * r.random_range(-1.0..1.0)).collect();
            let ang: f64 = r.random_range(-0.3..0.3);
            let s = r.random_range(0.8..1.2);
            let (sn, cs) = ang.sin_cos();
            let flat = (0..J)
                .flat_map(|j| {
                    let t = j as f64 / J as f64 * std::f64::consts::TAU;
                    let bump: f64 =
                        w.iter().enumerate().map(|(m, wm)| wm * ((m + 3) as f64 * t + m as f64).sin()).sum();
                    let rad = 20.0 + 4.0 * (2.0 * t).cos() + 2.0 * (3.0 * t).sin() + bump;
                    let (x, y) = (rad * t.cos(), 0.8 * rad * t.sin());
                    [32.0 + s * (cs * x - sn * y), 32.0 + s * (sn * x + cs * y)]
                })
                .collect();
            LandmarkSet::complete(2, flat).unwrap()
        })
        .collect()
}

fn random_pose(model: &ShapeModel, r: &mut ChaCha8Rng) -> (AffineTransform, Vec<f64>) {
    let s = r.random_range(20.0..40.0);
    let a = AffineTransform::from_params(
        2,
        vec![
            s * r.random_range(0.8..1.2),
            s * r.random_range(-0.3..0.3),
            s * r.random_range(-0.3..0.3),
            s * r.random_range(0.8..1.2),
            r.random_range(20.0..40.0),
            r.random_range(20.0..40.0),
        ],
    )
    .unwrap();
    let b = model.variances().iter().map(|v| 2.0 * v.sqrt() * r.random_range(-1.0..1.0)).collect();
    (a, b)
}

/// Whether the observed landmarks determine pose and mode weights locally: the Jacobian of the
/// observed coordinates with respect to (a, b) must have full column rank.
fn identifiable(model: &ShapeModel, a: &AffineTransform, b: &[f64], observed: &[usize]) -> bool {
    let k = model.mode_count();
    let shape = model.expand(b);
    let m = a.matrix();
    let mut jac = DMatrix::<f64>::zeros(2 * observed.len(), 6 + k);
    for (row, &j) in observed.iter().enumerate() {
        for r in 0..2 {
            let i = 2 * row + r;
            jac[(i, 2 * r)] = shape[2 * j];
            jac[(i, 2 * r + 1)] = shape[2 * j + 1];
            jac[(i, 4 + r)] = 1.0;
            for mode in 0..k {
                jac[(i, 6 + mode)] =
                    m[(r, 0)] * model.modes()[(2 * j, mode)] + m[(r, 1)] * model.modes()[(2 * j + 1, mode)];
            }
        }
    }
    let sv = jac.svd(false, false).singular_values;
    sv.min() > 1e-6 * sv.max()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (a.len() / 2) as f64).sqrt()
}

fn shape_fitting() -> Outcome {
    let start = Instant::now();
    let model = build_ssm(&toy_library(60, 7), 3).map_err(|e| e.to_string())?;
    let mut r = rng(1);
    let (mut worst_full, mut worst_masked) = (0f64, 0f64);
    let mut redrawn = 0;
    for _ in 0..100 {
        let (a, b) = random_pose(&model, &mut r);
        let x = synthesize(&model, &a, &b).unwrap();
        let diameter = x.diameter();
        let f = fit(&model, &x, &FitConfig::default()).map_err(|e| e.to_string())?;
        let rec = synthesize(&model, &f.a, &f.b).unwrap();
        worst_full = worst_full.max(rms(rec.coords(), x.coords()) / diameter);

        // Masks that leave pose and modes unidentifiable are redrawn.
        let mut masked = x.clone();
        loop {
            let mut idx: Vec<usize> = (0..J).collect();
            for i in (1..J).rev() {
                idx.swap(i, r.random_range(0..=i));
            }
            if identifiable(&model, &a, &b, &idx[J / 2..]) {
                for &j in &idx[..J / 2] {
                    masked.set_available(j, false);
                }
                break;
            }
            redrawn += 1;
        }
        let f = fit(&model, &masked, &FitConfig::default()).map_err(|e| e.to_string())?;
        let rec = synthesize(&model, &f.a, &f.b).unwrap();
        worst_masked = worst_masked.max(rms(rec.coords(), x.coords()) / diameter);
    }
    check(worst_full < 1e-5, format!("complete-shape RMS {worst_full:.2e} of the diameter"))?;
    check(worst_masked < 1e-2, format!("masked-shape RMS {worst_masked:.2e} of the diameter"))?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "worst RMS/diameter {worst_full:.1e} complete, {worst_masked:.1e} half masked ({redrawn} degenerate masks redrawn)"
    ))
}

// ---------------------------------------------------------------- gradients

fn toy_q_spec() -> NetSpec {
    NetSpec {
        input: vec![3],
        layers: vec![LayerSpec::Dense { out: 6 }, LayerSpec::Act(Activation::Relu), LayerSpec::Dense { out: 4 }],
        output: vec![2, 2],
    }
}

fn toy_transition(agent: usize, action: usize, reward: f32, terminal: bool, r: &mut ChaCha8Rng) -> Transition {
    Transition {
        agent,
        state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        action,
        reward,
        next_state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        terminal,
    }
}

fn all_weights(p: &Params) -> Vec<(String, usize)> {
    p.names().flat_map(|n| (0..p.get(n).unwrap().len()).map(move |i| (n.to_string(), i))).collect()
}

fn td_gradient_agreement() -> (usize, usize) {
    let spec = toy_q_spec();
    let mut r = rng(9);
    let mut q = QNetwork::new(spec.clone(), &mut r).unwrap();
    let drift = Params::init(&spec, &mut r).unwrap();
    q.online_mut().copy_weights_from(&drift);
    let batch: Vec<Transition> = (0..6)
        .map(|i| toy_transition(i % 2, r.random_range(0..2), r.random_range(-1.0..1.0), i == 3, &mut r))
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let (_, grads) = q.td_loss(&refs, 0.9).unwrap();
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            let out = oracle::reference_forward(&spec, q.target(), &to64(&t.next_state));
            let best = (0..2).map(|a| out[a * 2 + t.agent]).fold(f64::NEG_INFINITY, f64::max);
            t.reward as f64 + if t.terminal { 0.0 } else { 0.9 * best }
        })
        .collect();
    let loss = |p: &Params| {
        batch
            .iter()
            .zip(&targets)
            .map(|(t, y)| (oracle::reference_forward(&spec, p, &to64(&t.state))[t.action * 2 + t.agent] - y).powi(2))
            .sum::<f64>()
            / batch.len() as f64
    };
    oracle::finite_difference_agreement(q.online(), &all_weights(q.online()), 1e-3, 1e-3, 1e-5, loss, |n, i| {
        grads.get(n).unwrap().data()[i] as f64
    })
}

fn joint_gradient_agreement() -> (usize, usize) {
    let lib = toy_library(60, 1);
    let m = build_ssm(&lib, 3).unwrap();
    let net = DeepSsmNet::new(m.clone(), &[8], &mut rng(7)).unwrap();
    let shapes = toy_library(3, 8);
    let refs: Vec<&LandmarkSet> = shapes.iter().collect();
    let (_, grads) = net.joint_update(&refs).unwrap();
    let spec = net.spec().clone();
    let modes: Vec<Vec<f64>> = (0..3).map(|k| m.modes().column(k).iter().copied().collect()).collect();
    let sigma: Vec<f64> = m.variances().iter().map(|v| v.sqrt()).collect();
    let n = J as f64;
    let mc = [
        m.mean().chunks(2).map(|p| p[0]).sum::<f64>() / n,
        m.mean().chunks(2).map(|p| p[1]).sum::<f64>() / n,
    ];
    let kappa = (m.mean().chunks(2).map(|p| (p[0] - mc[0]).powi(2) + (p[1] - mc[1]).powi(2)).sum::<f64>() / n).sqrt();
    let loss = |p: &Params| -> f64 {
        shapes
            .iter()
            .map(|x| {
                let c = x.centroid();
                let s = (x.points().map(|q| distance(q, &c).powi(2)).sum::<f64>() / n).sqrt();
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
    oracle::finite_difference_agreement(net.params(), &all_weights(net.params()), 1e-3, 1e-3, 1e-3, loss, |n, i| {
        grads.get(n).unwrap().data()[i] as f64
    })
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let (td_ok, td_n) = td_gradient_agreement();
    let (j_ok, j_n) = joint_gradient_agreement();
    check(td_ok as f64 >= 0.95 * td_n as f64, format!("TD loss: {td_ok}/{td_n} weights agree"))?;
    check(j_ok as f64 >= 0.95 * j_n as f64, format!("reconstruction loss: {j_ok}/{j_n} weights agree"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("TD loss {td_ok}/{td_n}, reconstruction loss {j_ok}/{j_n} weights within 1e-3"))
}

// ---------------------------------------------------------------- environment

fn ramp(h: usize, w: usize) -> GridImage {
    let data = (0..h * w).map(|i| ((i * 7) % 23) as f32).collect();
    GridImage::new(vec![h, w], vec![1.0, 1.0], data).unwrap()
}

fn environment_algebra() -> Outcome {
    let start = Instant::now();
    let img = ramp(48, 48);
    let cfg = EnvConfig { oscillation_threshold: 1000, max_steps: 1000, target_tolerance: 1e-12, ..EnvConfig::for_dim(2) };
    let mut r = rng(3);
    let (mut border_hits, mut worst) = (0usize, 0f64);
    for walk in 0..10_000 {
        let target = [r.random_range(0.0..47.0), r.random_range(0.0..47.0)];
        let lm = LandmarkSet::complete(2, target.to_vec()).unwrap();
        let mut env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut r).map_err(|e| e.to_string())?;
        let d0 = env.target_distance(0).unwrap();
        let mut sum = 0.0;
        for _ in 0..r.random_range(1..60) {
            if !env.agent(0).is_active() {
                break;
            }
            let a = Action::from_index(r.random_range(0..4), 2).unwrap();
            let (axis, sign) = a.axis_sign(2);
            let mut next = env.agent(0).position.clone();
            next[axis] += sign * cfg.schedule.levels()[env.agent(0).level].1 as i64;
            let leaves = !env.in_fov(&next);
            let out = env.step(0, a).map_err(|e| e.to_string())?;
            if leaves {
                border_hits += 1;
                check(out.blocked && out.reward == -1.0, format!("walk {walk}: border move gave {}", out.reward))?;
            } else {
                check(!out.blocked, format!("walk {walk}: interior move was blocked"))?;
                sum += out.reward;
            }
        }
        let gap = (sum - (d0 - env.target_distance(0).unwrap())).abs();
        worst = worst.max(gap);
    }
    check(worst < 1e-9, format!("reward sum differs from the distance decrease by {worst:.2e}"))?;
    check(border_hits > 0, "no border move was exercised")?;

    let img = ramp(40, 40);
    let cfg = EnvConfig { max_steps: 60, ..EnvConfig::for_dim(2) };
    for episode in 0..1000 {
        let coords: Vec<f64> = (0..8).map(|_| r.random_range(0.0..39.0)).collect();
        let avail: Vec<bool> = (0..4).map(|_| r.random_bool(0.5)).collect();
        let lm = LandmarkSet::new(2, coords, avail.clone()).unwrap();
        let mut env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut r).map_err(|e| e.to_string())?;
        let parked: Vec<Vec<i64>> = env.agents().iter().map(|a| a.position.clone()).collect();
        let mut rounds = 0;
        while !env.is_done() && rounds < cfg.max_steps {
            for j in env.active_agents() {
                env.step(j, Action::from_index(r.random_range(0..4), 2).unwrap()).map_err(|e| e.to_string())?;
            }
            rounds += 1;
        }
        for (k, a) in env.agents().iter().enumerate() {
            if !avail[k] {
                check(a.position == parked[k] && a.status == Status::Passive, format!("episode {episode}: passive agent {k} moved"))?;
            }
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("10000 walks telescope within {worst:.1e}, {border_hits} border moves cost -1, 1000 episodes keep passive agents parked"))
}

// ---------------------------------------------------------------- replay and target network

fn replay_semantics() -> Outcome {
    let start = Instant::now();
    let capacity = 500;
    let extra = 1000;
    let mut memory = ReplayMemory::new(capacity);
    for tag in 0..capacity + extra {
        memory.push(Transition { agent: 0, state: vec![tag as f32], action: 0, reward: 0.0, next_state: vec![], terminal: false });
    }
    let tags: Vec<usize> = memory.iter().map(|t| t.state[0] as usize).collect();
    let mut sorted = tags.clone();
    sorted.sort_unstable();
    check(sorted == (extra..capacity + extra).collect::<Vec<_>>(), "memory does not hold exactly the newest entries")?;

    let spec = toy_q_spec();
    let mut r = rng(10);
    let mut q = QNetwork::new(spec, &mut r).unwrap();
    let probes: Vec<Transition> = (0..8).map(|i| toy_transition(i % 2, 1, 0.3, false, &mut r)).collect();
    let frozen = |q: &QNetwork| -> Vec<Vec<Vec<f32>>> {
        probes.iter().map(|t| q.target_values_batch(&t.next_state, &[t.agent]).unwrap()).collect()
    };
    let before = frozen(&q);
    for t in &probes {
        let (_, grads) = q.td_loss(&[t], 0.9).unwrap();
        opt_step(q.online_mut(), &grads, &OptimConfig::sgd(0.1)).map_err(|e| e.to_string())?;
    }
    check(frozen(&q) == before, "target values changed between syncs")?;
    q.sync_target();
    let online: Vec<Vec<Vec<f32>>> = probes.iter().map(|t| q.q_values_batch(&t.next_state, &[t.agent]).unwrap()).collect();
    check(frozen(&q) == online, "sync did not copy the online weights")?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("{} pushes into capacity {capacity} keep the newest; target frozen until sync", capacity + extra))
}

// ---------------------------------------------------------------- cardiac round trip

fn cardiac_mask(g: &CardiacGeometry, extents: [usize; 2]) -> LabelMask {
    LabelMask::new(extents, [1.0, 1.0], g.labels(&extents)).unwrap()
}

fn cardiac_round_trip() -> Outcome {
    let start = Instant::now();
    let spec = PhantomSpec::new(PhantomFamily::CardiacRings2D, 1.0, 0.0, 3);
    let mut r = rng(3);
    let mut worst = 1f64;
    for i in 0..50 {
        let g = CardiacGeometry::sample(&spec, &mut r);
        let mask = cardiac_mask(&g, [128, 128]);
        let lm = seg_to_landmarks(&mask).map_err(|e| format!("phantom {i}: {e}"))?;
        check(lm.len() == CARDIAC_LANDMARKS && CARDIAC_LANDMARKS == 33, format!("phantom {i}: {} landmarks", lm.len()))?;
        let back = landmarks_to_seg(&lm, [128, 128], [1.0, 1.0]).map_err(|e| format!("phantom {i}: {e}"))?;
        for label in [labels::RV, labels::LV, labels::MYO] {
            let d = dice(&mask, &back, label).unwrap();
            worst = worst.min(d);
            check(d >= 0.9, format!("phantom {i}: {} dice {d:.3}", labels::name(label)))?;
        }
    }
    let g = CardiacGeometry::canonical(&[128, 128]);
    let apart = CardiacGeometry { rv_center: [g.center[0], g.center[1] + 56.0], rv_radius: 20.0, ..g.clone() };
    let mut split = cardiac_mask(&g, [128, 128]).data().to_vec();
    for c in 0..128 {
        if split[62 * 128 + c] == labels::RV {
            split[62 * 128 + c] = labels::BACKGROUND;
        }
    }
    let tiny = CardiacGeometry { rv_center: [g.center[0], g.center[1] + g.epi_radius + 1.0], rv_radius: 3.0, ..g.clone() };
    let cases = [
        ("space between", cardiac_mask(&apart, [128, 128])),
        ("single connected", LabelMask::new([128, 128], [1.0, 1.0], split).unwrap()),
        ("too small", cardiac_mask(&tiny, [128, 128])),
    ];
    for (needle, mask) in cases {
        match seg_to_landmarks(&mask) {
            Err(e) if e.to_string().contains(needle) => {}
            other => return Err(format!("expected a '{needle}' rejection, got {other:?}")),
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("50 phantoms, 33 landmarks each, lowest dice {worst:.3}; 3 validity rejections"))
}

// ---------------------------------------------------------------- metrics

fn random_mask(r: &mut ChaCha8Rng, extents: Option<[usize; 2]>, spacing: Option<[f64; 2]>) -> LabelMask {
    let [h, w] = extents.unwrap_or([r.random_range(4..=32), r.random_range(4..=32)]);
    let mut data = vec![0u8; h * w];
    for _ in 0..r.random_range(1..6) {
        let label = r.random_range(1..4u8);
        let (r0, c0) = (r.random_range(0..h), r.random_range(0..w));
        let (r1, c1) = (r.random_range(r0..h) + 1, r.random_range(c0..w) + 1);
        for i in r0..r1 {
            for j in c0..c1 {
                data[i * w + j] = label;
            }
        }
    }
    for v in data.iter_mut() {
        if r.random::<f64>() < 0.05 {
            *v = r.random_range(0..4);
        }
    }
    let spacing = spacing.unwrap_or([r.random_range(0.5..2.0), r.random_range(0.5..2.0)]);
    LabelMask::new([h, w], spacing, data).unwrap()
}

fn metric_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut compared = 0;
    for _ in 0..20 {
        let a = random_mask(&mut r, None, None);
        let b = random_mask(&mut r, Some(a.extents()), Some(a.spacing()));
        for label in [labels::RV, labels::LV, labels::MYO] {
            let na = a.data().iter().filter(|&&l| l == label).count();
            let nb = b.data().iter().filter(|&&l| l == label).count();
            let both = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == label && y == label).count();
            let expected = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };
            check(dice(&a, &b, label).unwrap() == expected, "dice differs from pair counting")?;
            compared += 1;
            if na == 0 || nb == 0 {
                continue;
            }
            let (hd, sd) = oracle::metrics::hausdorff_and_asd(a.extents(), a.data(), b.data(), label, a.spacing());
            let (h, s) = (hausdorff(&a, &b, label).unwrap(), asd(&a, &b, label).unwrap());
            check((h - hd).abs() <= 1e-12 * hd.max(1.0), format!("hausdorff {h} vs brute force {hd}"))?;
            check((s - sd).abs() <= 1e-12 * sd.max(1.0), format!("surface distance {s} vs brute force {sd}"))?;
            compared += 2;
        }
        let pts = |r: &mut ChaCha8Rng| LandmarkSet::complete(2, (0..10).map(|_| r.random_range(0.0..32.0)).collect()).unwrap();
        let (p, t) = (pts(&mut r), pts(&mut r));
        let s = a.spacing();
        let brute = (0..5)
            .map(|j| ((p.point(j)[0] - t.point(j)[0]) * s[0]).hypot((p.point(j)[1] - t.point(j)[1]) * s[1]))
            .sum::<f64>()
            / 5.0;
        let got = ade(&p, &t, &[0, 1, 2, 3, 4], &s).unwrap();
        check((got - brute).abs() <= 1e-12 * brute.max(1.0), format!("ade {got} vs brute force {brute}"))?;
        compared += 1;
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("{compared} metric values match brute force on 20 mask pairs"))
}

// ---------------------------------------------------------------- learning experiments

/// Per-run means of the evaluation table, keyed by (method, mp_test).
type RunScores = BTreeMap<(String, String), [f64; 3]>;

fn run_scores(dir: &Path) -> RunScores {
    let text = fs::read_to_string(dir.join("eval/landmarks.csv")).unwrap();
    let mut acc: BTreeMap<(String, String), [(f64, usize); 3]> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = acc.entry((f[0].to_string(), f[2].to_string())).or_default();
        for k in 0..3 {
            let v: f64 = f[4 + k].parse().unwrap();
            if v.is_finite() {
                e[k].0 += v;
                e[k].1 += 1;
            }
        }
    }
    acc.into_iter().map(|(k, v)| (k, v.map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }))).collect()
}

fn experiment(root: &Path, name: &str, seed: u64, scenario: &str) -> Result<(PathBuf, RunScores), String> {
    let mut config = ExperimentConfig::from_toml(scenario).map_err(|e| e.to_string())?;
    config.seed = Some(seed);
    let out = root.join(format!("{name}_{seed}"));
    let run = Run::new(config, out.clone()).map_err(|e| e.to_string())?;
    run.execute_all().map_err(|e| format!("{name} seed {seed}: {e}"))?;
    let scores = run_scores(&out);
    Ok((out, scores))
}

const BASELINE: &str = "[scenario]\ntag = \"Baseline\"\nmp_test = [0.0]\n";
const MISSING_TRAIN: &str = "[scenario]\ntag = \"I\"\nmp_train = 75.0\nmp_test = [0.0]\n";
const INCOMPLETE_TEST: &str = "[scenario]\ntag = \"IV\"\nmp_test = [50.0]\n";

fn ade_of(s: &RunScores, method: &str, mp: &str) -> [f64; 3] {
    s[&(method.to_string(), mp.to_string())]
}

struct Experiments {
    baseline: Vec<(PathBuf, RunScores)>,
    missing: Vec<(PathBuf, RunScores)>,
    incomplete: Vec<(PathBuf, RunScores)>,
    durations: [Duration; 3],
}

fn run_experiments(root: &Path) -> Result<Experiments, String> {
    let mut durations = [Duration::ZERO; 3];
    let mut sets = Vec::new();
    for (i, (name, scenario)) in
        [("baseline", BASELINE), ("scenario_i", MISSING_TRAIN), ("scenario_iv", INCOMPLETE_TEST)].into_iter().enumerate()
    {
        let start = Instant::now();
        let runs = (1..=5).map(|seed| experiment(root, name, seed, scenario)).collect::<Result<Vec<_>, _>>()?;
        durations[i] = start.elapsed();
        sets.push(runs);
    }
    let incomplete = sets.pop().unwrap();
    let missing = sets.pop().unwrap();
    let baseline = sets.pop().unwrap();
    Ok(Experiments { baseline, missing, incomplete, durations })
}

fn baseline_learning(x: &Experiments) -> Outcome {
    let ades: Vec<f64> = x.baseline[..3].iter().map(|(_, s)| ade_of(s, "DeepMaQ", "0")[0]).collect();
    let m = median(ades.clone());
    // Three of the five baseline runs; the limit is scaled to that share.
    check(x.durations[0] * 3 / 5 <= Duration::from_secs(45 * 60), "runtime over 45 min")?;
    check(m <= 3.0, format!("median ADE {m:.2} voxels over seeds 1-3 ({ades:.2?})"))?;
    Ok(format!("median DeepMaQ ADE {m:.2} voxels over seeds 1-3 ({ades:.2?})"))
}

fn missing_label_trend(x: &Experiments) -> Outcome {
    let sg: Vec<f64> = x.missing.iter().map(|(_, s)| ade_of(s, "SGMaRL", "0")[0]).collect();
    let mq: Vec<f64> = x.missing.iter().map(|(_, s)| ade_of(s, "DeepMaQ", "0")[0]).collect();
    let base: Vec<f64> = x.baseline.iter().map(|(_, s)| ade_of(s, "SGMaRL", "0")[0]).collect();
    let (msg, mmq, mbase) = (median(sg.clone()), median(mq.clone()), median(base.clone()));
    let detail = format!(
        "median ADE with 75% of training labels missing: SGMaRL {msg:.2}, DeepMaQ {mmq:.2}; fully labelled SGMaRL {mbase:.2}"
    );
    check(x.durations[1] <= Duration::from_secs(90 * 60), "runtime over 90 min")?;
    check(msg <= mmq, format!("{detail}; SGMaRL is worse than DeepMaQ"))?;
    check(msg <= 2.0 * mbase, format!("{detail}; more than twice the fully labelled ADE"))?;
    Ok(detail)
}

fn incomplete_image_capability(x: &Experiments) -> Outcome {
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (dir, s) in &x.incomplete {
        let level = dir.join("detect/mp50/SGMaRL");
        let mut files = 0;
        for entry in fs::read_dir(&level).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            if name.starts_with("test_") && !name.ends_with("_snapshots.csv") {
                let p = load_landmarks(&path).map_err(|e| e.to_string())?;
                check(
                    p.all_available() && p.coords().iter().all(|v| v.is_finite()),
                    format!("{} lacks a prediction", path.display()),
                )?;
                files += 1;
            }
        }
        check(files > 0, format!("no predictions under {}", level.display()))?;
        let [_, i, o] = ade_of(s, "SGMaRL", "50");
        ins.push(i);
        outs.push(o);
    }
    let (mi, mo) = (median(ins), median(outs));
    let detail = format!("every index predicted; median ADE inside FOV {mi:.2}, outside {mo:.2} (ratio {:.2})", mo / mi);
    // Detection alone is a small share of each run; the whole run time bounds it.
    check(x.durations[2] <= Duration::from_secs(20 * 60), "runtime over 20 min")?;
    check(mo <= 3.0 * mi, detail.clone())?;
    Ok(detail)
}

fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn stable_bytes(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    if path.file_name().is_some_and(|n| n == "manifest.toml") {
        let text = String::from_utf8(bytes).unwrap();
        return text.lines().filter(|l| !l.starts_with("created_unix")).collect::<Vec<_>>().join("\n").into_bytes();
    }
    bytes
}

fn determinism(x: &Experiments) -> Outcome {
    let original = &x.incomplete[0].0;
    let mut config = ExperimentConfig::from_toml(INCOMPLETE_TEST).map_err(|e| e.to_string())?;
    config.seed = Some(1);
    let rerun_dir = original.with_file_name("rerun");
    let run = Run::new(config, rerun_dir.clone()).map_err(|e| e.to_string())?;
    let mut files = 0;
    for stage in Command::STAGES {
        run.execute(stage, &[], false).map_err(|e| e.to_string())?;
        let (a, b) = (original.join(stage.dir()), rerun_dir.join(stage.dir()));
        let names = tree(&a);
        check(names == tree(&b), format!("{} produced a different file set", stage.name()))?;
        for f in &names {
            check(stable_bytes(&a.join(f)) == stable_bytes(&b.join(f)), format!("{}/{} differs", stage.dir(), f.display()))?;
        }
        files += names.len();
    }
    Ok(format!("all 6 stages rerun byte-identical ({files} files)"))
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "shape fitting recovers generating shapes", shape_fitting()),
        (2, "gradient integrity", gradient_integrity()),
        (3, "environment algebra", environment_algebra()),
        (4, "replay and target-network semantics", replay_semantics()),
    ];
    let experiments = run_experiments(root.path());
    let learning: [(u32, &str, fn(&Experiments) -> Outcome); 4] = [
        (5, "desk-scale learning on complete images", baseline_learning),
        (6, "shape guidance under missing training labels", missing_label_trend),
        (7, "detection on incomplete images", incomplete_image_capability),
        (10, "stage reruns are byte-identical", determinism),
    ];
    for (n, name, f) in learning {
        let outcome = match &experiments {
            Ok(x) => f(x),
            Err(e) => Err(format!("experiments failed: {e}")),
        };
        results.push((n, name, outcome));
    }
    results.push((8, "cardiac landmark round trip", cardiac_round_trip()));
    results.push((9, "metric correctness", metric_correctness()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} criteria failed", results.len());
        std::process::exit(1);
    }
}
