//! Test-time detection: greedy navigation of all agents, alternated with shape-based
//! correction of the predicted landmark set.

use std::fmt::Write as _;

use rand::Rng;

use crate::env::{Action, EnvConfig, Environment, Mode, Status, TerminalReason};
use crate::error::{Error, Result};
use crate::grid::{distance, GridImage, LandmarkSet};
use crate::maq::{argmax, QNetwork};
use crate::ssmnet::{regularize, RegularizerConfig, ShapeRegressor};

#[derive(Clone, Debug, PartialEq)]
pub struct Navigation {
    /// Final agent positions, every index available.
    pub positions: LandmarkSet,
    /// How each agent stopped.
    pub reasons: Vec<TerminalReason>,
}

/// One greedy test-time episode. Every agent acts, whatever the availability of its
/// landmark; agents start at `init` when given and at random voxels of the field of view
/// otherwise. An agent's final position is its prediction.
pub fn navigate<R: Rng + ?Sized>(
    image: &GridImage,
    qnet: &QNetwork,
    init: Option<&LandmarkSet>,
    env_config: &EnvConfig,
    rng: &mut R,
) -> Result<Navigation> {
    let dim = image.dim();
    if qnet.state_len() != env_config.state_len(dim) || qnet.actions() != Action::count(dim) {
        return Err(Error::Config(format!(
            "Q-network expects states of {} values and {} actions; the environment gives {} and {}",
            qnet.state_len(),
            qnet.actions(),
            env_config.state_len(dim),
            Action::count(dim)
        )));
    }
    let placeholder = LandmarkSet::complete(dim, vec![0.0; dim * qnet.agents()])?;
    let mut env = Environment::reset(image, &placeholder, env_config, Mode::Test, init, rng)?;
    let len = qnet.state_len();
    while !env.is_done() {
        let active = env.active_agents();
        let mut states = vec![0f32; active.len() * len];
        for (i, &j) in active.iter().enumerate() {
            env.state_into(j, &mut states[i * len..(i + 1) * len]);
        }
        let q = qnet.q_values_batch(&states, &active)?;
        for (&j, qj) in active.iter().zip(&q) {
            env.step(j, Action::from_index(argmax(qj), dim)?)?;
        }
    }
    let reasons = env
        .agents()
        .iter()
        .map(|a| match a.status {
            Status::Terminated(r) => r,
            _ => unreachable!("test episodes end with every agent terminated"),
        })
        .collect();
    Ok(Navigation { positions: env.positions(), reasons })
}

/// Landmarks of one outer iteration, before and after correction. Without correction both
/// hold the navigation result.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub navigated: LandmarkSet,
    pub corrected: LandmarkSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectConfig {
    pub env: EnvConfig,
    /// Stop once every landmark moves less than this between outer iterations; `None` always
    /// runs the full iteration cap.
    pub convergence: Option<f64>,
    /// Correction settings, including the outer iteration cap.
    pub regularizer: RegularizerConfig,
}

impl DetectConfig {
    pub fn new(env: EnvConfig, regularizer: RegularizerConfig) -> Self {
        Self { env, convergence: Some(0.5), regularizer }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub prediction: LandmarkSet,
    pub snapshots: Vec<Snapshot>,
    /// Terminal reasons of the last navigation.
    pub reasons: Vec<TerminalReason>,
    pub iterations: usize,
}

impl DetectionResult {
    /// Rows `iteration,phase,index,c0,c1[,c2]` with phase `maq` before correction and `ssm`
    /// after it.
    pub fn snapshots_csv(&self) -> String {
        let dim = self.prediction.dim();
        let mut out = String::from("iteration,phase,index");
        for d in 0..dim {
            let _ = write!(out, ",c{d}");
        }
        out.push('\n');
        for s in &self.snapshots {
            for (phase, set) in [("maq", &s.navigated), ("ssm", &s.corrected)] {
                for (j, p) in set.points().enumerate() {
                    let _ = write!(out, "{},{phase},{j}", s.iteration);
                    for c in p {
                        let _ = write!(out, ",{c}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Clamps every landmark to the full image frame, where all landmarks lie.
fn within_frame(mut set: LandmarkSet, image: &GridImage) -> LandmarkSet {
    let extents = image.parent_extents();
    for j in 0..set.len() {
        let p: Vec<f64> = set.point(j).iter().zip(extents).map(|(v, &n)| v.clamp(0.0, (n - 1) as f64)).collect();
        set.set_point(j, &p);
    }
    set
}

fn max_displacement(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    (0..a.len()).map(|j| distance(a.point(j), b.point(j))).fold(0.0, f64::max)
}

/// Alternates navigation and shape correction. Navigation starts at random positions and
/// afterwards from the previous prediction. Without a regressor only navigation runs,
/// which gives the navigation-only baseline.
pub fn detect<R: Rng + ?Sized>(
    image: &GridImage,
    qnet: &QNetwork,
    regressor: Option<&dyn ShapeRegressor>,
    config: &DetectConfig,
    rng: &mut R,
) -> Result<DetectionResult> {
    config.regularizer.validate()?;
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut reasons = Vec::new();
    for it in 1..=config.regularizer.max_iterations {
        let prev = snapshots.last().map(|s| &s.corrected);
        let nav = navigate(image, qnet, prev, &config.env, rng)?;
        reasons = nav.reasons;
        let corrected = match regressor {
            Some(r) => within_frame(regularize(r, &nav.positions, &config.regularizer)?.landmarks, image),
            None => nav.positions.clone(),
        };
        let converged = match (prev, config.convergence) {
            (Some(p), Some(limit)) => max_displacement(p, &corrected) < limit,
            _ => false,
        };
        snapshots.push(Snapshot { iteration: it, navigated: nav.positions, corrected });
        if converged {
            break;
        }
    }
    let last = snapshots.last().expect("at least one iteration");
    Ok(DetectionResult { prediction: last.corrected.clone(), iterations: last.iteration, snapshots, reasons })
}
