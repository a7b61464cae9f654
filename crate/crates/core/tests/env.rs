use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgmarl_core::env::{trace_to_csv, Action, EnvConfig, Environment, Mode, MultiScaleSchedule, Status, TerminalReason};
use sgmarl_core::grid::{crop_window, distance, extract_patch, GridImage, LandmarkSet};
use sgmarl_core::Error;

fn ramp(h: usize, w: usize) -> GridImage {
    let data = (0..h * w).map(|i| ((i * 7) % 23) as f32).collect();
    GridImage::new(vec![h, w], vec![1.0, 1.0], data).unwrap()
}

fn fine_config() -> EnvConfig {
    EnvConfig { schedule: MultiScaleSchedule::single(), ..EnvConfig::for_dim(2) }
}

fn one_target(r: f64, c: f64) -> LandmarkSet {
    LandmarkSet::complete(2, vec![r, c]).unwrap()
}

/// Test-mode environment with agent 0 at `start` and training-style rewards toward `target`.
fn placed(image: &GridImage, start: [f64; 2], target: [f64; 2], config: &EnvConfig) -> Environment {
    // Train mode keeps the target for rewards; the start is forced by retrying seeds.
    let lm = one_target(target[0], target[1]);
    for seed in 0.. {
        let env = Environment::reset(image, &lm, config, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if env.agent(0).position == [start[0] as i64, start[1] as i64] {
            return env;
        }
    }
    unreachable!()
}

#[test]
fn action_sets_per_dimension() {
    assert_eq!(Action::count(2), 4);
    assert_eq!(Action::count(3), 6);
    assert_eq!(Action::all(2), &[Action::Left, Action::Right, Action::Up, Action::Down]);
    assert_eq!(Action::from_index(3, 2).unwrap(), Action::Down);
    assert!(Action::from_index(4, 2).is_err());
    for (i, a) in Action::all(3).iter().enumerate() {
        assert_eq!(a.index(), i);
    }
}

#[test]
fn schedule_validation() {
    assert!(MultiScaleSchedule::new(vec![(4, 4), (2, 2), (1, 1)]).is_ok());
    assert!(MultiScaleSchedule::new(vec![(4, 2), (2, 2), (1, 1)]).is_err());
    assert!(MultiScaleSchedule::new(vec![(4, 4), (2, 2)]).is_err());
    assert!(MultiScaleSchedule::new(vec![]).is_err());
}

#[test]
fn all_unavailable_means_all_passive() {
    let img = ramp(20, 20);
    let lm = LandmarkSet::new(2, vec![3.0, 3.0, 9.0, 9.0], vec![false, false]).unwrap();
    let env = Environment::reset(&img, &lm, &fine_config(), Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(env.is_done());
    assert!(env.agents().iter().all(|a| a.status == Status::Passive));
}

#[test]
fn reset_is_deterministic_per_seed() {
    let img = ramp(30, 30);
    let lm = LandmarkSet::complete(2, vec![3.0, 3.0, 9.0, 9.0, 20.0, 4.0]).unwrap();
    let cfg = EnvConfig::for_dim(2);
    let a = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a.positions(), b.positions());
    assert!(a.agents().iter().all(|x| x.level == 0 && x.frames().count() == 4));
}

#[test]
fn initial_positions_are_uniform_over_the_fov() {
    let img = ramp(100, 100);
    let lm = one_target(50.0, 50.0);
    let cfg = fine_config();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut bins = [0u32; 100];
    for _ in 0..10_000 {
        let env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut rng).unwrap();
        let p = &env.agent(0).position;
        bins[(p[0] / 10 * 10 + p[1] / 10) as usize] += 1;
    }
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - 100.0).powi(2) / 100.0).sum();
    // Upper 1% point of chi-square with 99 degrees of freedom.
    assert!(chi2 < 134.64, "chi-square {chi2}");
}

#[test]
fn reward_is_the_distance_decrease() {
    let img = ramp(20, 20);
    let mut env = placed(&img, [5.0, 5.0], [5.0, 9.0], &fine_config());
    let out = env.step(0, Action::Right).unwrap();
    assert_eq!(out.reward, 1.0);
    assert!(!out.blocked);
    assert_eq!(env.agent(0).position, vec![5, 6]);
}

#[test]
fn border_moves_stay_and_cost_one() {
    let img = ramp(20, 20);
    let mut env = placed(&img, [0.0, 7.0], [10.0, 10.0], &fine_config());
    let out = env.step(0, Action::Up).unwrap();
    assert_eq!(out.reward, -1.0);
    assert!(out.blocked);
    assert_eq!(env.agent(0).position, vec![0, 7]);
}

#[test]
fn cropped_fov_blocks_at_the_cut() {
    let img = ramp(40, 20);
    let lm = one_target(25.0, 5.0);
    let (cropped, lm) = crop_window(&img, &lm, 10, 20, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut env = Environment::reset(&cropped, &lm, &fine_config(), Mode::Train, None, &mut rng).unwrap();
    assert!(env.in_fov(&env.agent(0).position.clone()));
    for _ in 0..40 {
        if !env.agent(0).is_active() {
            break;
        }
        env.step(0, Action::Up).unwrap();
    }
    assert_eq!(env.agent(0).position[0], 10);
}

#[test]
fn stepping_an_inactive_agent_is_a_usage_error() {
    let img = ramp(20, 20);
    let lm = LandmarkSet::new(2, vec![3.0, 3.0, 9.0, 9.0], vec![false, true]).unwrap();
    let mut env = Environment::reset(&img, &lm, &fine_config(), Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(env.step(0, Action::Up), Err(Error::Usage(_))));
    assert!(matches!(env.step(5, Action::Up), Err(Error::Usage(_))));
}

#[test]
fn state_tensor_shapes_and_contents() {
    let img = GridImage::new(vec![100, 100], vec![1.0, 1.0], vec![3.0; 10_000]).unwrap();
    let cfg = EnvConfig { patch_side: 81, ..EnvConfig::for_dim(2) };
    let env = Environment::reset(&img, &one_target(50.0, 50.0), &cfg, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg80 = EnvConfig { patch_side: 79, ..cfg.clone() };
    assert!(Environment::reset(&img, &one_target(1.0, 1.0), &EnvConfig { patch_side: 80, ..cfg.clone() }, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    let t = env.state_tensor(0);
    assert_eq!(t.shape(), &[4, 81, 81]);
    let n = 81 * 81;
    for k in 1..4 {
        assert_eq!(&t.data()[..n], &t.data()[k * n..(k + 1) * n]);
    }
    let env = Environment::reset(&img, &one_target(50.0, 50.0), &cfg80, Mode::Train, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(env.state_tensor(0).shape(), &[4, 79, 79]);
}

#[test]
fn newest_frame_is_a_fresh_patch() {
    let img = ramp(64, 64);
    let cfg = EnvConfig::for_dim(2);
    let lm = one_target(30.5, 30.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut rng).unwrap();
    for step in 0..30 {
        if env.is_done() {
            break;
        }
        let a = Action::from_index(rng.random_range(0..4), 2).unwrap();
        let before: Vec<Vec<f32>> = env.agent(0).frames().map(<[f32]>::to_vec).collect();
        let level_before = env.agent(0).level;
        let out = env.step(0, a).unwrap();
        let agent = env.agent(0);
        let factor = cfg.schedule.levels()[agent.level].0;
        let fresh = extract_patch(&img, &agent.position_f64(), cfg.patch_side, factor);
        let t = env.state_tensor(0);
        let n = cfg.patch_side * cfg.patch_side;
        assert_eq!(&t.data()[..n], fresh.data(), "step {step}");
        if out.level == level_before {
            // Without a scale change the older frames shift back by one.
            assert_eq!(&t.data()[n..], &before[..3].concat()[..]);
        }
    }
}

#[test]
fn oscillation_descends_then_terminates() {
    let img = ramp(64, 64);
    let cfg = EnvConfig::for_dim(2);
    let lm = one_target(0.3, 0.3);
    let mut env = Environment::reset(&img, &lm, &cfg, Mode::Test, Some(&one_target(32.0, 32.0)), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut levels = vec![];
    let mut steps = 0;
    while env.agent(0).is_active() {
        let a = if steps % 2 == 0 { Action::Left } else { Action::Right };
        let out = env.step(0, a).unwrap();
        levels.push(out.level);
        steps += 1;
    }
    assert_eq!(env.agent(0).status, Status::Terminated(TerminalReason::Oscillation));
    assert!(levels.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*levels.last().unwrap(), 2);
    // 3 visits per scale: the start plus two returns.
    assert_eq!(steps, 12);
}

#[test]
fn border_pushing_at_the_finest_scale_is_reported() {
    let img = ramp(16, 16);
    let mut env = placed(&img, [0.0, 5.0], [10.0, 10.0], &fine_config());
    env.step(0, Action::Up).unwrap();
    let out = env.step(0, Action::Up).unwrap();
    assert_eq!(out.terminated, Some(TerminalReason::BorderStayed));
}

#[test]
fn training_episodes_stop_at_the_target() {
    let img = ramp(20, 20);
    let mut env = placed(&img, [5.0, 5.0], [5.0, 7.2], &fine_config());
    env.step(0, Action::Right).unwrap();
    let out = env.step(0, Action::Right).unwrap();
    assert_eq!(out.terminated, Some(TerminalReason::TargetFound));
    assert!(out.is_terminal());
}

#[test]
fn trace_rows_serialize() {
    let img = ramp(20, 20);
    let mut env = placed(&img, [5.0, 5.0], [5.0, 9.0], &fine_config());
    env.enable_trace(3);
    env.step(0, Action::Right).unwrap();
    let csv = trace_to_csv(env.trace().unwrap());
    assert_eq!(csv, "episode,t,agent,p0,p1,action,reward,status\n3,1,0,5,6,right,1,active\n");
}

/// Random walk that never touches the border; returns (sum of rewards, start, end).
fn telescoping_walk(seed: u64) -> (f64, f64) {
    let img = ramp(48, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = [rng.random_range(5.0..43.0), rng.random_range(5.0..43.0)];
    let cfg = EnvConfig {
        oscillation_threshold: 1000,
        max_steps: 1000,
        target_tolerance: 1e-12,
        ..EnvConfig::for_dim(2)
    };
    let lm = one_target(target[0], target[1]);
    let mut env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut rng).unwrap();
    let start = env.target_distance(0).unwrap();
    let mut sum = 0.0;
    for _ in 0..rng.random_range(1..40) {
        let a = Action::from_index(rng.random_range(0..4), 2).unwrap();
        let (axis, sign) = a.axis_sign(2);
        let mut next = env.agent(0).position.clone();
        next[axis] += sign * cfg.schedule.levels()[env.agent(0).level].1 as i64;
        if !env.in_fov(&next) {
            continue;
        }
        let out = env.step(0, a).unwrap();
        assert!(!out.blocked);
        sum += out.reward;
    }
    let end = env.target_distance(0).unwrap();
    (sum, start - end)
}

#[test]
fn reward_telescopes_over_many_walks() {
    for seed in 0..2000 {
        let (sum, delta) = telescoping_walk(seed);
        assert!((sum - delta).abs() < 1e-9, "seed {seed}: {sum} vs {delta}");
    }
}

#[test]
fn passive_agents_never_move_and_episodes_end() {
    let img = ramp(40, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = EnvConfig { max_steps: 60, ..EnvConfig::for_dim(2) };
    for _ in 0..200 {
        let coords: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..39.0)).collect();
        let avail: Vec<bool> = (0..4).map(|_| rng.random_bool(0.5)).collect();
        let lm = LandmarkSet::new(2, coords, avail.clone()).unwrap();
        let mut env = Environment::reset(&img, &lm, &cfg, Mode::Train, None, &mut rng).unwrap();
        let parked: Vec<Vec<i64>> = env.agents().iter().map(|a| a.position.clone()).collect();
        let mut rounds = 0;
        while !env.is_done() {
            for j in env.active_agents() {
                let before = env.agent(j).level;
                env.step(j, Action::from_index(rng.random_range(0..4), 2).unwrap()).unwrap();
                assert!(env.agent(j).level >= before);
                for (k, a) in env.agents().iter().enumerate() {
                    if !avail[k] {
                        assert_eq!(a.position, parked[k]);
                        assert_eq!(a.status, Status::Passive);
                    }
                }
            }
            rounds += 1;
            assert!(rounds <= cfg.max_steps);
        }
    }
}

proptest! {
    #[test]
    fn telescoping_property(seed in 10_000u64..1_000_000) {
        let (sum, delta) = telescoping_walk(seed);
        prop_assert!((sum - delta).abs() < 1e-9);
    }

    #[test]
    fn distance_reward_matches_definition(r in 1i64..19, c in 1i64..19, tr in 0.0f64..20.0, tc in 0.0f64..20.0, a in 0usize..4) {
        let img = ramp(20, 20);
        let mut env = placed(&img, [r as f64, c as f64], [tr, tc], &fine_config());
        let action = Action::from_index(a, 2).unwrap();
        let old = env.agent(0).position_f64();
        let out = env.step(0, action).unwrap();
        let new = env.agent(0).position_f64();
        prop_assert!(!out.blocked);
        prop_assert_eq!(out.reward, distance(&[tr, tc], &old) - distance(&[tr, tc], &new));
    }
}
