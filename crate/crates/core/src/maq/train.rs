use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;

use super::{QNetwork, ReplayMemory, Transition};
use crate::env::{Action, EnvConfig, Environment, Mode, TerminalReason};
use crate::error::{Error, Result};
use crate::grid::{Case, LandmarkSet};
use crate::inference::navigate;
use crate::nn::{checkpoint, opt_step, OptimConfig};

/// Loop lengths, periods and learning settings of Q-network training.
///
/// Periods count joint time steps: one step of every active agent in the current episode,
/// followed by one optimizer update. The exploration schedule counts individual agent moves.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub episodes: usize,
    /// Stop once this many agent moves have been made, whatever the episode count.
    pub max_env_steps: Option<u64>,
    /// Time steps per episode.
    pub episode_steps: usize,
    /// Target synchronisation (and exploration update) period.
    pub target_sync: usize,
    /// Shape-library refresh period; `None` disables the refresh.
    pub library_refresh: Option<usize>,
    /// Training images navigated at every refresh.
    pub refresh_images: usize,
    pub gamma: f32,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Agent moves over which exploration decays linearly from start to end; `None` uses
    /// half of the move budget.
    pub epsilon_decay_steps: Option<u64>,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub optim: OptimConfig,
    /// Where to write `qnet_latest.ckpt` at every synchronisation and `qnet_final.ckpt` at the end.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainSchedule {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            episodes: 1000,
            max_env_steps: None,
            episode_steps: if dim == 3 { 500 } else { 200 },
            target_sync: 500,
            library_refresh: None,
            refresh_images: 8,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: None,
            batch_size: if dim == 3 { 32 } else { 48 },
            memory_capacity: 100_000,
            optim: OptimConfig { max_grad_norm: Some(10.0), ..OptimConfig::adam(2.5e-4) },
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1], got {}", self.gamma)));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("exploration rate {e} outside [0, 1]")));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::Config("exploration must not increase".into()));
        }
        if self.target_sync == 0 || self.batch_size == 0 || self.memory_capacity == 0 || self.episode_steps == 0 {
            return Err(Error::Config("periods, batch size, capacity and episode length must be positive".into()));
        }
        if self.library_refresh == Some(0) {
            return Err(Error::Config("library refresh period must be positive".into()));
        }
        if !(self.optim.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Length of the exploration decay in agent moves. Without an explicit value this is
    /// half of `max_env_steps`, or half of the largest possible number of moves.
    pub fn decay_horizon(&self, agents: usize) -> u64 {
        self.epsilon_decay_steps.unwrap_or_else(|| {
            let budget = self
                .max_env_steps
                .unwrap_or((self.episodes as u64).saturating_mul(self.episode_steps as u64).saturating_mul(agents as u64));
            budget / 2
        })
    }

    /// Exploration rate after `env_steps` agent moves of `agents` agents.
    pub fn epsilon_at(&self, env_steps: u64, agents: usize) -> f64 {
        let horizon = self.decay_horizon(agents);
        if env_steps >= horizon {
            return self.epsilon_end;
        }
        let frac = (env_steps as f64 / horizon as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Receives navigation results on training images at every library refresh.
pub trait ShapeHooks {
    /// Returns the loss of the shape-network update it triggered, if any.
    fn refresh(&mut self, predictions: Vec<LandmarkSet>) -> Result<Option<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Joint time steps so far.
    pub step: u64,
    pub episode: usize,
    pub epsilon: f64,
    /// Mean loss of the updates made during the episode (NaN when none were made).
    pub loss: f64,
    pub mean_reward: f64,
    pub reasons: [usize; 4],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub syncs: u64,
    pub refreshes: u64,
    /// Exploration rate after every synchronisation.
    pub epsilons: Vec<f64>,
    pub refresh_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,episode,epsilon,loss,mean_reward");
        for r in TerminalReason::ALL {
            let _ = write!(out, ",{}", r.name());
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{},{},{},{}", row.step, row.episode, row.epsilon, row.loss, row.mean_reward);
            for c in row.reasons {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

fn reason_slot(r: TerminalReason) -> usize {
    TerminalReason::ALL.iter().position(|&x| x == r).expect("listed")
}

/// Multi-agent Q-learning over the training cases.
///
/// Each episode picks a random training image, places agents, and lets every active agent
/// act epsilon-greedily once per time step. Every agent move is stored; after each time step
/// one minibatch update is made once the memory holds a full batch.
pub fn train<R: Rng + ?Sized>(
    mut qnet: QNetwork,
    cases: &[Case],
    env_config: &EnvConfig,
    schedule: &TrainSchedule,
    mut hooks: Option<&mut dyn ShapeHooks>,
    rng: &mut R,
) -> Result<(QNetwork, TrainingLog)> {
    schedule.validate()?;
    env_config.validate()?;
    let mut log = TrainingLog::default();
    if schedule.episodes == 0 {
        return Ok((qnet, log));
    }
    if cases.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let dim = cases[0].image.dim();
    if qnet.state_len() != env_config.state_len(dim) || qnet.actions() != Action::count(dim) {
        return Err(Error::Config("Q-network input or output does not match the environment".into()));
    }
    if cases.iter().any(|c| c.landmarks.len() != qnet.agents()) {
        return Err(Error::Config("landmark count differs from the Q-network's agent count".into()));
    }
    if let Some(dir) = &schedule.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let state_len = qnet.state_len();
    let mut memory = ReplayMemory::new(schedule.memory_capacity);
    let mut epsilon = schedule.epsilon_start;
    let mut step: u64 = 0;

    'episodes: for episode in 0..schedule.episodes {
        if schedule.max_env_steps.is_some_and(|m| log.env_steps >= m) {
            break;
        }
        let case = &cases[rng.random_range(0..cases.len())];
        let mut env = Environment::reset(&case.image, &case.landmarks, env_config, Mode::Train, None, rng)?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut reward_sum = 0.0;
        let mut moves = 0usize;
        let mut reasons = [0usize; 4];
        for _ in 0..schedule.episode_steps {
            if env.is_done() {
                break;
            }
            let active = env.active_agents();
            // Decide exploration first so only greedy agents need a forward pass.
            let explore: Vec<bool> = active.iter().map(|_| rng.random::<f64>() < epsilon).collect();
            let greedy: Vec<usize> = active.iter().zip(&explore).filter(|(_, &e)| !e).map(|(&j, _)| j).collect();
            let mut states = vec![0f32; greedy.len() * state_len];
            for (i, &j) in greedy.iter().enumerate() {
                env.state_into(j, &mut states[i * state_len..(i + 1) * state_len]);
            }
            let q = qnet.q_values_batch(&states, &greedy)?;
            let mut gi = 0;
            for (&j, &e) in active.iter().zip(&explore) {
                let a = if e {
                    rng.random_range(0..qnet.actions())
                } else {
                    gi += 1;
                    super::argmax(&q[gi - 1])
                };
                let mut state = vec![0f32; state_len];
                env.state_into(j, &mut state);
                let out = env.step(j, Action::from_index(a, dim)?)?;
                let mut next_state = vec![0f32; state_len];
                env.state_into(j, &mut next_state);
                reward_sum += out.reward;
                moves += 1;
                if let Some(r) = out.terminated {
                    reasons[reason_slot(r)] += 1;
                }
                memory.push(Transition {
                    agent: j,
                    state,
                    action: a,
                    reward: out.reward as f32,
                    next_state,
                    terminal: out.is_terminal(),
                });
            }
            log.env_steps += active.len() as u64;
            step += 1;
            if memory.len() >= schedule.batch_size {
                let batch = memory.sample(schedule.batch_size, rng);
                let (loss, grads) = qnet.td_loss(&batch, schedule.gamma)?;
                opt_step(qnet.online_mut(), &grads, &schedule.optim)?;
                log.grad_steps += 1;
                loss_sum += loss as f64;
                loss_n += 1;
            }
            if step % schedule.target_sync as u64 == 0 {
                qnet.sync_target();
                log.syncs += 1;
                epsilon = schedule.epsilon_at(log.env_steps, qnet.agents());
                log.epsilons.push(epsilon);
                if let Some(dir) = &schedule.checkpoint_dir {
                    checkpoint::save(qnet.online(), &dir.join("qnet_latest.ckpt"))?;
                }
            }
            if let Some(period) = schedule.library_refresh {
                if step % period as u64 == 0 {
                    // Only complete images give whole-shape predictions.
                    let complete: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].image.is_complete()).collect();
                    let mut predictions = Vec::new();
                    if !complete.is_empty() {
                        for _ in 0..schedule.refresh_images.min(complete.len()) {
                            let i = complete[rng.random_range(0..complete.len())];
                            predictions.push(navigate(&cases[i].image, &qnet, None, env_config, rng)?.positions);
                        }
                    }
                    log.refreshes += 1;
                    if let Some(h) = hooks.as_deref_mut() {
                        if let Some(l) = h.refresh(predictions)? {
                            log.refresh_losses.push(l);
                        }
                    }
                }
            }
            if schedule.max_env_steps.is_some_and(|m| log.env_steps >= m) {
                push_row(&mut log, step, episode, epsilon, loss_sum, loss_n, reward_sum, moves, reasons);
                break 'episodes;
            }
        }
        push_row(&mut log, step, episode, epsilon, loss_sum, loss_n, reward_sum, moves, reasons);
    }
    if let Some(dir) = &schedule.checkpoint_dir {
        checkpoint::save(qnet.online(), &dir.join("qnet_final.ckpt"))?;
    }
    Ok((qnet, log))
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    log: &mut TrainingLog,
    step: u64,
    episode: usize,
    epsilon: f64,
    loss_sum: f64,
    loss_n: usize,
    reward_sum: f64,
    moves: usize,
    reasons: [usize; 4],
) {
    log.rows.push(LogRow {
        step,
        episode,
        epsilon,
        loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
        mean_reward: if moves > 0 { reward_sum / moves as f64 } else { 0.0 },
        reasons,
    });
}
