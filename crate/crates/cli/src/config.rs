use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgmarl_core::env::{EnvConfig, MultiScaleSchedule};
use sgmarl_core::grid::{PhantomFamily, PhantomSpec, ScenarioOptions, ScenarioTag};
use sgmarl_core::maq::{QNetShape, TrainSchedule};
use sgmarl_core::nn::OptimConfig;
use sgmarl_core::shape::AffineJitter;
use sgmarl_core::ssmnet::{JointSchedule, PretrainSchedule};

use crate::error::CliError;

/// Whole experiment description. Every section and key is optional except `seed`; unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub phantom: PhantomSection,
    pub scenario: ScenarioSection,
    pub ssm: SsmSection,
    pub qnet: QNetSection,
    pub env: EnvSection,
    pub train: TrainSection,
    pub detect: DetectSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub family: String,
    pub amplitude: f64,
    pub noise: f64,
    /// Image extents; empty selects the family default.
    pub extents: Vec<usize>,
    pub train: usize,
    pub test: usize,
    /// Complete landmark sets, without images, from which the shape model is built.
    pub shapes: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            family: PhantomFamily::BodyOutline2D.name().into(),
            amplitude: 1.0,
            noise: 0.05,
            extents: vec![],
            train: 200,
            test: 50,
            shapes: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub tag: String,
    pub mp_train: f64,
    /// One test set is generated per level.
    pub mp_test: Vec<f64>,
    /// Landmarks closer than this to a cut edge count as missing; negative selects half the
    /// patch side.
    pub margin: f64,
    pub label_group: Option<Vec<usize>>,
    pub max_redraws: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { tag: "baseline".into(), mp_train: 0.0, mp_test: vec![0.0], margin: -1.0, label_group: None, max_redraws: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmSection {
    pub modes: usize,
    pub hidden: Vec<usize>,
    pub pretrain_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_learning_rate: f32,
    pub jitter_matrix: f64,
    pub jitter_translation: f64,
    pub joint_updates: usize,
    pub joint_batch: usize,
    pub joint_learning_rate: f32,
}

impl Default for SsmSection {
    fn default() -> Self {
        let p = PretrainSchedule::default();
        let j = JointSchedule::default();
        Self {
            modes: 3,
            hidden: vec![128, 128],
            pretrain_samples: 2000,
            pretrain_epochs: p.epochs,
            pretrain_batch: p.batch_size,
            pretrain_learning_rate: p.optim.learning_rate,
            jitter_matrix: p.jitter.matrix,
            jitter_translation: p.jitter.translation,
            joint_updates: 100,
            joint_batch: j.batch_size,
            joint_learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QNetSection {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: Vec<usize>,
}

impl Default for QNetSection {
    fn default() -> Self {
        Self { conv_channels: vec![8, 16, 16], kernel: 3, pool: 2, hidden: vec![64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub patch_side: usize,
    pub history: usize,
    /// `[factor, step]` pairs, coarsest first.
    pub schedule: Vec<[usize; 2]>,
    pub oscillation_threshold: u32,
    pub max_steps: usize,
    pub target_tolerance: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            patch_side: 9,
            history: 4,
            schedule: vec![[4, 4], [2, 2], [1, 1]],
            oscillation_threshold: 3,
            max_steps: 80,
            target_tolerance: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    /// Agent-move budget; 0 leaves only the episode count.
    pub max_env_steps: u64,
    pub episode_steps: usize,
    pub target_sync: usize,
    /// Shape-library refresh period in time steps; 0 disables joint training.
    pub library_refresh: usize,
    pub refresh_images: usize,
    pub gamma: f32,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: Option<u64>,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub learning_rate: f32,
    /// Gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            episodes: 1_000_000,
            max_env_steps: 200_000,
            episode_steps: 80,
            target_sync: 200,
            library_refresh: 1000,
            refresh_images: 16,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: None,
            batch_size: 32,
            memory_capacity: 50_000,
            learning_rate: 1e-3,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    /// `network` or `closed-form`.
    pub regressor: String,
    /// Correction threshold in voxels; absent means calibrated from the trained regressor.
    pub tau: Option<f64>,
    pub max_subiterations: usize,
    pub max_iterations: usize,
    /// Displacement below which the outer loop stops; 0 always runs every iteration.
    pub convergence: f64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            regressor: "network".into(),
            tau: None,
            max_subiterations: 5,
            max_iterations: 5,
            convergence: 0.5,
            workers: 0,
        }
    }
}

/// Coarse dependency levels of the pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Model,
    Training,
    Detection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressorKind {
    Network,
    ClosedForm,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Full configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("a seed is mandatory (config key `seed` or --seed)".into()))
    }

    pub fn family(&self) -> Result<PhantomFamily, CliError> {
        PhantomFamily::parse(&self.phantom.family).map_err(config_err)
    }

    pub fn phantom_spec(&self, seed: u64) -> Result<PhantomSpec, CliError> {
        let mut spec = PhantomSpec::new(self.family()?, self.phantom.amplitude, self.phantom.noise, seed);
        if !self.phantom.extents.is_empty() {
            spec.extents = self.phantom.extents.clone();
        }
        spec.validate().map_err(config_err)?;
        Ok(spec)
    }

    pub fn tag(&self) -> Result<ScenarioTag, CliError> {
        self.scenario.tag.parse().map_err(config_err)
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        let margin = if self.scenario.margin < 0.0 { (self.env.patch_side / 2) as f64 } else { self.scenario.margin };
        ScenarioOptions { margin, label_group: self.scenario.label_group.clone(), max_redraws: self.scenario.max_redraws }
    }

    pub fn env_config(&self) -> Result<EnvConfig, CliError> {
        let levels = self.env.schedule.iter().map(|l| (l[0], l[1])).collect();
        let env = EnvConfig {
            patch_side: self.env.patch_side,
            history: self.env.history,
            schedule: MultiScaleSchedule::new(levels).map_err(config_err)?,
            oscillation_threshold: self.env.oscillation_threshold,
            max_steps: self.env.max_steps,
            target_tolerance: self.env.target_tolerance,
        };
        env.validate().map_err(config_err)?;
        Ok(env)
    }

    pub fn qnet_shape(&self) -> QNetShape {
        QNetShape {
            conv_channels: self.qnet.conv_channels.clone(),
            kernel: self.qnet.kernel,
            pool: self.qnet.pool,
            hidden: self.qnet.hidden.clone(),
        }
    }

    pub fn train_schedule(&self) -> Result<TrainSchedule, CliError> {
        let t = &self.train;
        let schedule = TrainSchedule {
            episodes: t.episodes,
            max_env_steps: (t.max_env_steps > 0).then_some(t.max_env_steps),
            episode_steps: t.episode_steps,
            target_sync: t.target_sync,
            library_refresh: (t.library_refresh > 0).then_some(t.library_refresh),
            refresh_images: t.refresh_images,
            gamma: t.gamma,
            epsilon_start: t.epsilon_start,
            epsilon_end: t.epsilon_end,
            epsilon_decay_steps: t.epsilon_decay_steps,
            batch_size: t.batch_size,
            memory_capacity: t.memory_capacity,
            optim: OptimConfig {
                max_grad_norm: (t.max_grad_norm > 0.0).then_some(t.max_grad_norm),
                ..OptimConfig::adam(t.learning_rate)
            },
            checkpoint_dir: None,
        };
        schedule.validate().map_err(config_err)?;
        Ok(schedule)
    }

    pub fn pretrain_schedule(&self) -> Result<PretrainSchedule, CliError> {
        let s = &self.ssm;
        let schedule = PretrainSchedule {
            epochs: s.pretrain_epochs,
            batch_size: s.pretrain_batch,
            optim: OptimConfig::adam(s.pretrain_learning_rate),
            jitter: AffineJitter { matrix: s.jitter_matrix, translation: s.jitter_translation },
        };
        schedule.validate().map_err(config_err)?;
        Ok(schedule)
    }

    pub fn joint_schedule(&self) -> JointSchedule {
        JointSchedule {
            updates: self.ssm.joint_updates,
            batch_size: self.ssm.joint_batch,
            optim: OptimConfig::adam(self.ssm.joint_learning_rate),
        }
    }

    pub fn regressor(&self) -> Result<RegressorKind, CliError> {
        match self.detect.regressor.as_str() {
            "network" => Ok(RegressorKind::Network),
            "closed-form" => Ok(RegressorKind::ClosedForm),
            other => Err(CliError::Config(format!("unknown regressor '{other}' (network | closed-form)"))),
        }
    }

    /// Checks every section up front so later failures are runtime failures.
    pub fn validate(&self) -> Result<(), CliError> {
        let seed = self.seed()?;
        let spec = self.phantom_spec(seed)?;
        self.tag()?;
        self.env_config()?;
        self.train_schedule()?;
        self.pretrain_schedule()?;
        self.regressor()?;
        if self.phantom.train == 0 || self.phantom.test == 0 {
            return Err(CliError::Config("training and test sets must be non-empty".into()));
        }
        if self.phantom.shapes < 2 {
            return Err(CliError::Config("the shape model needs at least 2 construction shapes".into()));
        }
        let coords = spec.family.dim() * spec.landmark_count;
        if self.ssm.modes == 0 || self.ssm.modes > coords.min(self.phantom.shapes - 1) {
            return Err(CliError::Config(format!(
                "mode count {} must lie in 1..={}",
                self.ssm.modes,
                coords.min(self.phantom.shapes - 1)
            )));
        }
        if seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed must not exceed {}", i64::MAX)));
        }
        let tag = self.tag()?;
        if tag != ScenarioTag::I && self.scenario.mp_train != 0.0 {
            return Err(CliError::Config(format!("scenario {tag} uses complete training images; mp_train must be 0")));
        }
        if matches!(tag, ScenarioTag::Baseline | ScenarioTag::II) && self.scenario.mp_test.iter().any(|&m| m != 0.0) {
            return Err(CliError::Config(format!("scenario {tag} uses complete test images; mp_test must be [0]")));
        }
        let mut names: Vec<String> = self.scenario.mp_test.iter().map(|&m| level_name(m)).collect();
        names.sort();
        names.dedup();
        if names.len() != self.scenario.mp_test.len() {
            return Err(CliError::Config("mp_test levels must be distinct".into()));
        }
        if self.scenario.mp_test.is_empty() {
            return Err(CliError::Config("at least one mp_test level is required".into()));
        }
        for &mp in self.scenario.mp_test.iter().chain([&self.scenario.mp_train]) {
            if !(0.0..100.0).contains(&mp) {
                return Err(CliError::Config(format!("missing proportion {mp} outside [0, 100)")));
            }
        }
        if self.qnet.conv_channels.is_empty() || self.qnet.kernel == 0 || self.qnet.pool == 0 {
            return Err(CliError::Config("the Q-network needs at least one convolution".into()));
        }
        if let Some(tau) = self.detect.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(CliError::Config("tau must be positive".into()));
            }
        }
        if !(self.detect.convergence >= 0.0) {
            return Err(CliError::Config("convergence threshold must be non-negative".into()));
        }
        if self.detect.max_iterations == 0 || self.detect.max_subiterations == 0 {
            return Err(CliError::Config("iteration caps must be at least 1".into()));
        }
        let env = self.env_config()?;
        let dim = spec.family.dim();
        self.qnet_shape()
            .spec(&env, dim, spec.landmark_count)
            .layer_shapes()
            .map_err(|e| CliError::Config(format!("Q-network: {e}")))?;
        Ok(())
    }

    /// The part of the configuration that determines the artifacts of `stage`. Sections
    /// consumed only by later stages are reset to their defaults.
    pub fn stage_view(&self, stage: Stage) -> Self {
        let mut v = Self { out: None, ..self.clone() };
        if stage < Stage::Model {
            v.ssm = SsmSection::default();
        }
        if stage < Stage::Training {
            v.qnet = QNetSection::default();
            v.train = TrainSection::default();
        }
        if stage < Stage::Detection {
            v.detect = DetectSection::default();
        }
        v
    }

    /// Identity of the experiment for aggregation: everything except the seed, the scenario
    /// and the output directory.
    pub fn comparison_view(&self) -> Self {
        Self { seed: None, out: None, scenario: ScenarioSection::default(), ..self.clone() }
    }
}

fn config_err(e: sgmarl_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Directory-safe name of a missing-proportion level, e.g. `mp50`.
pub fn level_name(mp: f64) -> String {
    format!("mp{mp}")
}
