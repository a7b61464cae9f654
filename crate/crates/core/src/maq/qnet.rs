use rand::Rng;

use super::Transition;
use crate::env::{Action, EnvConfig};
use crate::error::{Error, Result};
use crate::nn::{Gradients, NetSpec, Network, Params, Tensor};

/// Shared Q-network: one forward pass scores every action for every agent, laid out as
/// an `actions x agents` matrix; agent `j` reads column `j`.
#[derive(Clone, Debug)]
pub struct QNetwork {
    net: Network,
    online: Params,
    target: Params,
    actions: usize,
    agents: usize,
}

/// Layer sizes of the convolutional trunk and fully connected head.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetShape {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Hidden widths of the head; the output layer is appended.
    pub hidden: Vec<usize>,
}

impl Default for QNetShape {
    fn default() -> Self {
        Self { conv_channels: vec![8, 16, 32, 32], kernel: 3, pool: 2, hidden: vec![256, 128, 64] }
    }
}

impl QNetShape {
    pub fn spec(&self, env: &EnvConfig, dim: usize, agents: usize) -> NetSpec {
        let actions = Action::count(dim);
        let mut dense = self.hidden.clone();
        dense.push(actions * agents);
        NetSpec::conv_trunk(env.state_shape(dim), &self.conv_channels, self.kernel, self.pool, &dense, vec![actions, agents])
    }
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let params = Params::init(&spec, rng)?;
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetSpec, params: Params) -> Result<Self> {
        if spec.output.len() != 2 {
            return Err(Error::Config(format!("Q-network output must be actions x agents, got {:?}", spec.output)));
        }
        let (actions, agents) = (spec.output[0], spec.output[1]);
        let net = Network::new(spec)?;
        // Validates the parameter layout against the spec.
        net.forward(&params, &Tensor::zeros(net.input_shape().to_vec()))?;
        Ok(Self { net, target: params.clone(), online: params, actions, agents })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn spec(&self) -> &NetSpec {
        self.net.spec()
    }

    pub fn online(&self) -> &Params {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Params {
        &mut self.online
    }

    pub fn target(&self) -> &Params {
        &self.target
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn state_len(&self) -> usize {
        self.net.input_len()
    }

    /// Copies the online weights into the frozen target copy.
    pub fn sync_target(&mut self) {
        self.target.copy_weights_from(&self.online);
    }

    fn column(&self, out: &[f32], sample: usize, agent: usize) -> Vec<f32> {
        let base = sample * self.actions * self.agents;
        (0..self.actions).map(|a| out[base + a * self.agents + agent]).collect()
    }

    fn check_agent(&self, j: usize) -> Result<()> {
        if j >= self.agents {
            return Err(Error::Usage(format!("agent {j} out of range for {} agents", self.agents)));
        }
        Ok(())
    }

    /// Online Q-values of agent `j` for one state.
    pub fn q_values(&self, state: &[f32], j: usize) -> Result<Vec<f32>> {
        self.check_agent(j)?;
        Ok(self.q_values_batch(state, &[j])?.pop().expect("one row"))
    }

    /// Online Q-values for a batch of concatenated states, one agent per state.
    pub fn q_values_batch(&self, states: &[f32], agents: &[usize]) -> Result<Vec<Vec<f32>>> {
        self.batch_values(&self.online, states, agents)
    }

    fn batch_values(&self, params: &Params, states: &[f32], agents: &[usize]) -> Result<Vec<Vec<f32>>> {
        for &j in agents {
            self.check_agent(j)?;
        }
        if agents.is_empty() {
            return Ok(vec![]);
        }
        let len = self.state_len();
        if states.len() != len * agents.len() {
            return Err(Error::Usage(format!("expected {} state values, got {}", len * agents.len(), states.len())));
        }
        let mut shape = vec![agents.len()];
        shape.extend_from_slice(self.net.input_shape());
        let out = self.net.forward(params, &Tensor::new(shape, states.to_vec())?)?;
        Ok(agents.iter().enumerate().map(|(i, &j)| self.column(out.data(), i, j)).collect())
    }

    /// Frozen-target Q-values for a batch.
    pub fn target_values_batch(&self, states: &[f32], agents: &[usize]) -> Result<Vec<Vec<f32>>> {
        self.batch_values(&self.target, states, agents)
    }

    /// Squared temporal-difference loss over a batch and its gradient with respect to the
    /// online weights. The bootstrap target uses the frozen weights and carries no gradient.
    pub fn td_loss(&self, batch: &[&Transition], gamma: f32) -> Result<(f32, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Usage("temporal-difference loss needs a non-empty batch".into()));
        }
        let n = batch.len();
        let len = self.state_len();
        let mut states = Vec::with_capacity(n * len);
        let mut next = Vec::with_capacity(n * len);
        for t in batch {
            self.check_agent(t.agent)?;
            if t.state.len() != len || t.next_state.len() != len || t.action >= self.actions {
                return Err(Error::Usage("transition does not match the network shape".into()));
            }
            states.extend_from_slice(&t.state);
            next.extend_from_slice(&t.next_state);
        }
        let agents: Vec<usize> = batch.iter().map(|t| t.agent).collect();
        let boot = self.target_values_batch(&next, &agents)?;
        let mut shape = vec![n];
        shape.extend_from_slice(self.net.input_shape());
        let trace = self.net.forward_trace(&self.online, &Tensor::new(shape, states)?)?;
        let out = trace.output().data();
        let mut grad = vec![0f32; out.len()];
        let mut loss = 0f64;
        let per = self.actions * self.agents;
        for (i, t) in batch.iter().enumerate() {
            let best = boot[i].iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let y = t.reward + if t.terminal { 0.0 } else { gamma * best };
            let k = i * per + t.action * self.agents + t.agent;
            let diff = out[k] - y;
            loss += (diff as f64) * (diff as f64);
            grad[k] = 2.0 * diff / n as f32;
        }
        let loss_grad = Tensor::new(trace.output().shape().to_vec(), grad)?;
        let grads = self.net.backward(&self.online, &trace, &loss_grad)?;
        Ok(((loss / n as f64) as f32, grads))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over precomputed Q-values.
pub fn select_action<R: Rng + ?Sized>(q: &[f32], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}
