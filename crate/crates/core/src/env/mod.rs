//! Patch-based navigation environment: one agent per landmark, moving on a voxel grid.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{distance, GridImage, LandmarkSet, Pyramid};
use crate::nn::Tensor;

/// Unit moves along one grid axis. Up/down act on axis 0, left/right on the last axis,
/// forward/back on axis 1 of 3D images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Forward,
    Back,
}

impl Action {
    const ORDER: [Action; 6] = [Action::Left, Action::Right, Action::Up, Action::Down, Action::Forward, Action::Back];

    pub fn count(dim: usize) -> usize {
        2 * dim
    }

    pub fn all(dim: usize) -> &'static [Action] {
        &Self::ORDER[..Self::count(dim)]
    }

    pub fn from_index(index: usize, dim: usize) -> Result<Self> {
        Self::all(dim)
            .get(index)
            .copied()
            .ok_or_else(|| Error::Argument(format!("action index {index} out of range for {dim}D")))
    }

    pub fn index(self) -> usize {
        Self::ORDER.iter().position(|&a| a == self).expect("listed")
    }

    /// Axis and direction (+1 or -1) of the move in a `dim`-dimensional grid.
    pub fn axis_sign(self, dim: usize) -> (usize, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (dim - 1, -1),
            Action::Right => (dim - 1, 1),
            Action::Forward => (1, 1),
            Action::Back => (1, -1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
            Action::Forward => "forward",
            Action::Back => "back",
        };
        f.write_str(s)
    }
}

/// (downsample factor, step length in full-resolution voxels), coarsest first.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleSchedule {
    levels: Vec<(usize, usize)>,
}

impl MultiScaleSchedule {
    pub fn new(levels: Vec<(usize, usize)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("multi-scale schedule needs at least one level".into()));
        }
        if levels.last().map(|l| l.0) != Some(1) {
            return Err(Error::Config("the finest level must have factor 1".into()));
        }
        if levels.iter().any(|&(f, s)| f == 0 || s == 0) {
            return Err(Error::Config("factors and step lengths must be positive".into()));
        }
        if levels.windows(2).any(|w| w[1].1 >= w[0].1) {
            return Err(Error::Config("step lengths must strictly decrease from coarse to fine".into()));
        }
        Ok(Self { levels })
    }

    pub fn single() -> Self {
        Self { levels: vec![(1, 1)] }
    }

    pub fn levels(&self) -> &[(usize, usize)] {
        &self.levels
    }

    pub fn factors(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.0).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }
}

impl Default for MultiScaleSchedule {
    fn default() -> Self {
        Self { levels: vec![(4, 4), (2, 2), (1, 1)] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Odd patch side in voxels of the sampled level.
    pub patch_side: usize,
    /// Frames kept in each agent's history.
    pub history: usize,
    pub schedule: MultiScaleSchedule,
    /// Visits of one position at one scale that count as oscillation.
    pub oscillation_threshold: u32,
    pub max_steps: usize,
    /// Training episodes end once an agent is closer than this to its target.
    pub target_tolerance: f64,
}

impl EnvConfig {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            patch_side: 9,
            history: 4,
            schedule: MultiScaleSchedule::default(),
            oscillation_threshold: 3,
            max_steps: if dim == 3 { 500 } else { 200 },
            target_tolerance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.patch_side % 2 == 0 {
            return Err(Error::Config(format!("patch side must be odd, got {}", self.patch_side)));
        }
        if self.history == 0 || self.oscillation_threshold == 0 || self.max_steps == 0 {
            return Err(Error::Config("history, oscillation threshold and max steps must be positive".into()));
        }
        if !(self.target_tolerance > 0.0) {
            return Err(Error::Config("target tolerance must be positive".into()));
        }
        MultiScaleSchedule::new(self.schedule.levels.clone()).map(|_| ())
    }

    /// Length of one agent state: `history * side^dim`.
    pub fn state_len(&self, dim: usize) -> usize {
        self.history * self.patch_side.pow(dim as u32)
    }

    pub fn state_shape(&self, dim: usize) -> Vec<usize> {
        let mut s = vec![self.history];
        s.extend(std::iter::repeat_n(self.patch_side, dim));
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Targets known; rewards and target-found termination active.
    Train,
    /// Targets unknown to the agents; every agent navigates.
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerminalReason {
    TargetFound,
    Oscillation,
    MaxSteps,
    /// Oscillation at the finest scale caused by pushing against the border.
    BorderStayed,
}

impl TerminalReason {
    pub const ALL: [TerminalReason; 4] =
        [TerminalReason::TargetFound, TerminalReason::Oscillation, TerminalReason::MaxSteps, TerminalReason::BorderStayed];

    pub fn name(self) -> &'static str {
        match self {
            TerminalReason::TargetFound => "target_found",
            TerminalReason::Oscillation => "oscillation",
            TerminalReason::MaxSteps => "max_steps",
            TerminalReason::BorderStayed => "border_stayed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Active,
    Passive,
    Terminated(TerminalReason),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Active => f.write_str("active"),
            Status::Passive => f.write_str("passive"),
            Status::Terminated(r) => f.write_str(r.name()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub index: usize,
    /// Full-resolution voxel position in the parent frame.
    pub position: Vec<i64>,
    /// Newest patch first.
    frames: VecDeque<Vec<f32>>,
    pub level: usize,
    pub status: Status,
    visits: BTreeMap<Vec<i64>, u32>,
    pub steps: usize,
}

impl AgentState {
    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.iter().map(Vec::as_slice)
    }

    pub fn visits(&self, position: &[i64]) -> u32 {
        self.visits.get(position).copied().unwrap_or(0)
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn position_f64(&self) -> Vec<f64> {
        self.position.iter().map(|&p| p as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// The move would have left the field of view, so the agent stayed.
    pub blocked: bool,
    pub terminated: Option<TerminalReason>,
    /// Scale level after the step.
    pub level: usize,
}

impl StepOutcome {
    /// Whether the transition ends the task for bootstrapping purposes. Oscillation and
    /// step limits only truncate an episode.
    pub fn is_terminal(&self) -> bool {
        self.terminated == Some(TerminalReason::TargetFound)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub t: usize,
    pub agent: usize,
    pub position: Vec<i64>,
    pub action: Action,
    pub reward: f64,
    pub status: Status,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let dim = rows.first().map(|r| r.position.len()).unwrap_or(2);
    let mut out = String::from("episode,t,agent");
    for d in 0..dim {
        let _ = write!(out, ",p{d}");
    }
    out.push_str(",action,reward,status\n");
    for r in rows {
        let _ = write!(out, "{},{},{}", r.episode, r.t, r.agent);
        for p in &r.position {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{},{},{}", r.action, r.reward, r.status);
    }
    out
}

/// One episode on one image.
#[derive(Clone, Debug)]
pub struct Environment {
    pyramid: Pyramid,
    fov_lo: Vec<i64>,
    fov_hi: Vec<i64>,
    parent: Vec<usize>,
    targets: Option<LandmarkSet>,
    config: EnvConfig,
    mode: Mode,
    agents: Vec<AgentState>,
    episode: usize,
    trace: Option<Vec<TraceRow>>,
}

/// Random integer voxel inside the field of view.
fn random_in_fov<R: Rng + ?Sized>(lo: &[i64], hi: &[i64], rng: &mut R) -> Vec<i64> {
    lo.iter().zip(hi).map(|(&l, &h)| rng.random_range(l..h)).collect()
}

impl Environment {
    /// Starts an episode.
    ///
    /// Training: agents whose landmark is available start at uniform random voxels in the
    /// field of view; the others are passive and parked at its center. Testing: every agent
    /// is active and starts at `init` (rounded and kept inside the parent frame) when given,
    /// otherwise at a random voxel in the field of view.
    pub fn reset<R: Rng + ?Sized>(
        image: &GridImage,
        landmarks: &LandmarkSet,
        config: &EnvConfig,
        mode: Mode,
        init: Option<&LandmarkSet>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if image.is_empty() {
            return Err(Error::Argument("field of view is empty".into()));
        }
        let dim = image.dim();
        if landmarks.dim() != dim {
            return Err(Error::Argument("landmarks and image differ in dimension".into()));
        }
        if let Some(init) = init {
            if init.len() != landmarks.len() || init.dim() != dim {
                return Err(Error::Argument("initial positions do not match the landmark set".into()));
            }
        }
        let fov_lo: Vec<i64> = image.fov_origin().iter().map(|&o| o as i64).collect();
        let fov_hi: Vec<i64> = fov_lo.iter().zip(image.extents()).map(|(&l, &e)| l + e as i64).collect();
        let center: Vec<i64> = fov_lo.iter().zip(&fov_hi).map(|(&l, &h)| (l + h - 1) / 2).collect();
        let parent = image.parent_extents().to_vec();
        let mut positions = Vec::with_capacity(landmarks.len());
        let mut statuses = Vec::with_capacity(landmarks.len());
        for j in 0..landmarks.len() {
            let active = mode == Mode::Test || landmarks.is_available(j);
            let pos = if !active {
                center.clone()
            } else if let (Mode::Test, Some(init)) = (mode, init) {
                init.point(j)
                    .iter()
                    .zip(&parent)
                    .map(|(&c, &e)| (c.round() as i64).clamp(0, e as i64 - 1))
                    .collect()
            } else {
                random_in_fov(&fov_lo, &fov_hi, rng)
            };
            positions.push(pos);
            statuses.push(if active { Status::Active } else { Status::Passive });
        }
        let pyramid = Pyramid::new(image, &config.schedule.factors());
        let mut env = Self {
            pyramid,
            fov_lo,
            fov_hi,
            parent,
            targets: (mode == Mode::Train).then(|| landmarks.clone()),
            config: config.clone(),
            mode,
            agents: Vec::with_capacity(positions.len()),
            episode: 0,
            trace: None,
        };
        for (j, (position, status)) in positions.into_iter().zip(statuses).enumerate() {
            let patch = env.patch(&position, 0);
            let mut visits = BTreeMap::new();
            visits.insert(position.clone(), 1);
            env.agents.push(AgentState {
                index: j,
                position,
                frames: std::iter::repeat_n(patch, config.history).collect(),
                level: 0,
                status,
                visits,
                steps: 0,
            });
        }
        Ok(env)
    }

    /// Records every step into an in-memory trace tagged with `episode`.
    pub fn enable_trace(&mut self, episode: usize) {
        self.episode = episode;
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.fov_lo.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, j: usize) -> &AgentState {
        &self.agents[j]
    }

    pub fn active_agents(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.is_active()).map(|a| a.index).collect()
    }

    /// No agent can act any more.
    pub fn is_done(&self) -> bool {
        self.agents.iter().all(|a| !a.is_active())
    }

    pub fn in_fov(&self, p: &[i64]) -> bool {
        p.iter().enumerate().all(|(d, &x)| x >= self.fov_lo[d] && x < self.fov_hi[d])
    }

    fn patch(&self, position: &[i64], level: usize) -> Vec<f32> {
        let c: Vec<f64> = position.iter().map(|&p| p as f64).collect();
        self.pyramid.patch(&c, self.config.patch_side, level)
    }

    /// Current positions as a complete landmark set.
    pub fn positions(&self) -> LandmarkSet {
        let coords = self.agents.iter().flat_map(|a| a.position_f64()).collect();
        LandmarkSet::complete(self.dim(), coords).expect("finite positions")
    }

    /// Distance from agent `j` to its target (training mode only).
    pub fn target_distance(&self, j: usize) -> Option<f64> {
        self.targets.as_ref().map(|t| distance(t.point(j), &self.agents[j].position_f64()))
    }

    /// Copies the stacked frame history of agent `j` into `out` (newest frame first).
    pub fn state_into(&self, j: usize, out: &mut [f32]) {
        let len = self.config.patch_side.pow(self.dim() as u32);
        for (k, f) in self.agents[j].frames.iter().enumerate() {
            out[k * len..(k + 1) * len].copy_from_slice(f);
        }
    }

    /// Frame history of agent `j` as an `n x side^dim` tensor.
    pub fn state_tensor(&self, j: usize) -> Tensor {
        let mut data = vec![0f32; self.config.state_len(self.dim())];
        self.state_into(j, &mut data);
        Tensor::new(self.config.state_shape(self.dim()), data).expect("positive extents")
    }

    /// Moves agent `j` one step.
    pub fn step(&mut self, j: usize, action: Action) -> Result<StepOutcome> {
        let dim = self.dim();
        let agent = self
            .agents
            .get(j)
            .ok_or_else(|| Error::Usage(format!("agent {j} does not exist")))?;
        if !agent.is_active() {
            return Err(Error::Usage(format!("agent {j} cannot act: {}", agent.status)));
        }
        if action.index() >= Action::count(dim) {
            return Err(Error::Usage(format!("action {action} is not available in {dim}D")));
        }
        let (axis, sign) = action.axis_sign(dim);
        let step_len = self.config.schedule.levels()[agent.level].1 as i64;
        let old = agent.position.clone();
        let mut new = old.clone();
        new[axis] += sign * step_len;
        let blocked = !self.in_fov(&new);
        if blocked {
            new = old.clone();
        }
        let reward = if blocked {
            -1.0
        } else if let Some(t) = &self.targets {
            let target = t.point(j);
            let of: Vec<f64> = old.iter().map(|&p| p as f64).collect();
            let nf: Vec<f64> = new.iter().map(|&p| p as f64).collect();
            distance(target, &of) - distance(target, &nf)
        } else {
            0.0
        };

        let finest = self.config.schedule.finest();
        let threshold = self.config.oscillation_threshold;
        let max_steps = self.config.max_steps;
        let mut descended = false;
        let mut terminated = None;
        {
            let agent = &mut self.agents[j];
            agent.position = new.clone();
            agent.steps += 1;
            let count = agent.visits.entry(new.clone()).or_insert(0);
            *count += 1;
            if *count >= threshold {
                if agent.level < finest {
                    agent.level += 1;
                    agent.visits.clear();
                    agent.visits.insert(new.clone(), 1);
                    descended = true;
                } else {
                    terminated =
                        Some(if blocked { TerminalReason::BorderStayed } else { TerminalReason::Oscillation });
                }
            }
            if terminated.is_none() && agent.steps >= max_steps {
                terminated = Some(TerminalReason::MaxSteps);
            }
        }
        if terminated.is_none() && self.mode == Mode::Train {
            if let Some(d) = self.target_distance(j) {
                if d < self.config.target_tolerance {
                    terminated = Some(TerminalReason::TargetFound);
                }
            }
        }
        let level = self.agents[j].level;
        let patch = self.patch(&new, level);
        let history = self.config.history;
        let agent = &mut self.agents[j];
        if descended {
            agent.frames = std::iter::repeat_n(patch, history).collect();
        } else {
            agent.frames.pop_back();
            agent.frames.push_front(patch);
        }
        if let Some(reason) = terminated {
            agent.status = Status::Terminated(reason);
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow {
                episode: self.episode,
                t: agent.steps,
                agent: j,
                position: new,
                action,
                reward,
                status: agent.status,
            });
        }
        Ok(StepOutcome { reward, blocked, terminated, level })
    }

    /// Parent-frame extents.
    pub fn parent_extents(&self) -> &[usize] {
        &self.parent
    }
}
