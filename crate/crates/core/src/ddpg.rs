//! Deep deterministic policy gradient.
//!
//! Actor and critic are plain [`Mlp`]s. The actor emits a tanh-capped action
//! in `[-1, 1]^d` that is mapped affinely onto the environment bounds; the
//! critic sees the observation concatenated with that unit-space action.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, AdamConfig, AdamState, Gradients, Mlp};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Interval { low, high }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    /// Maps `u` in `[-1, 1]` onto the interval.
    pub fn from_unit(&self, u: f64) -> f64 {
        (self.low + 0.5 * (u + 1.0) * (self.high - self.low)).clamp(self.low, self.high)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

/// Episodic environment with a continuous, box-bounded action.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_bounds(&self) -> Vec<Interval>;
    /// Starts an episode and returns the first observation.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Action in unit space `[-1, 1]^d`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// FIFO experience store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    rng: Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer_capacity", "must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: rng::seeded(seed),
        })
    }

    pub fn store(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    /// Uniform indices, drawn with replacement.
    pub fn sample_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::InsufficientData {
                needed: batch_size.max(1),
                available: self.items.len(),
            });
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<Transition>> {
        let idx = self.sample_indices(batch_size)?;
        Ok(idx.into_iter().map(|i| self.items[i].clone()).collect())
    }
}

/// How often exploration noise (and warm-up actions) are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSchedule {
    PerStep,
    /// One draw held for the whole episode.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Discount of the critic target; the reward discount `lambda`.
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub exploration_start: f64,
    pub exploration_end: f64,
    /// Gradient updates per environment step once the buffer holds a batch.
    pub updates_per_step: usize,
    /// Episodes at the start of training that take uniform random actions
    /// instead of the noisy policy.
    pub warmup_episodes: usize,
    pub noise: NoiseSchedule,
    /// Run greedy validation episodes every this many training episodes and
    /// keep the snapshot with the best mean validation return. Zero ranks
    /// snapshots by training-episode return instead.
    pub validation_interval: usize,
    pub validation_seeds: Vec<u64>,
    /// Stored rewards are `(r + reward_offset) * reward_scale`.
    pub reward_offset: f64,
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            gamma: 0.95,
            tau: 0.005,
            buffer_capacity: 50_000,
            batch_size: 64,
            exploration_start: 0.2,
            exploration_end: 0.02,
            updates_per_step: 1,
            warmup_episodes: 0,
            noise: NoiseSchedule::PerStep,
            validation_interval: 0,
            validation_seeds: Vec::new(),
            reward_offset: 0.0,
            reward_scale: 1.0,
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid("tau", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::invalid("buffer_capacity", "must hold at least one batch"));
        }
        if !(self.exploration_start >= 0.0 && self.exploration_end >= 0.0) {
            return Err(Error::invalid("exploration", "noise scales must be non-negative"));
        }
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.validation_interval > 0 && self.validation_seeds.is_empty() {
            return Err(Error::invalid("validation_seeds", "needed when validation_interval > 0"));
        }
        if !(self.reward_scale.is_finite() && self.reward_offset.is_finite()) {
            return Err(Error::invalid("reward_scale", "must be finite"));
        }
        Ok(())
    }

    /// Noise scale for `episode` of `episodes`, decaying linearly to the floor.
    pub fn exploration_at(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.exploration_end;
        }
        let frac = episode as f64 / (episodes - 1) as f64;
        // Convex form so both endpoints are hit exactly.
        self.exploration_start * (1.0 - frac) + self.exploration_end * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    /// Actor output (plus noise) in `[-1, 1]^d`.
    pub unit: Vec<f64>,
    /// The same action mapped onto the bounds.
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Actor and critic weights; everything needed to act or resume evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub actor: Mlp,
    pub critic: Mlp,
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: AdamState,
    critic_opt: AdamState,
    bounds: Vec<Interval>,
    state_dim: usize,
    pub gamma: f64,
    pub tau: f64,
    pub exploration_sigma: f64,
    noise: Rng,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden);
    s.push(output);
    s
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl DdpgAgent {
    pub fn new(state_dim: usize, bounds: Vec<Interval>, config: &DdpgConfig) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || bounds.is_empty() {
            return Err(Error::invalid("state_dim", "state and action dimensions must be positive"));
        }
        if bounds.iter().any(|b| !(b.low < b.high)) {
            return Err(Error::invalid("action_bounds", "every interval needs low < high"));
        }
        let action_dim = bounds.len();
        let mut actor_acts = vec![Activation::Relu; config.actor_hidden.len()];
        actor_acts.push(Activation::Tanh);
        let mut critic_acts = vec![Activation::Relu; config.critic_hidden.len()];
        critic_acts.push(Activation::Identity);
        let mut actor = Mlp::new(
            &sizes(state_dim, &config.actor_hidden, action_dim),
            &actor_acts,
            rng::derive_seed(config.seed, rng::stream::AGENT, 0),
        )?;
        let mut critic = Mlp::new(
            &sizes(state_dim + action_dim, &config.critic_hidden, 1),
            &critic_acts,
            rng::derive_seed(config.seed, rng::stream::AGENT, 1),
        )?;
        shrink_output_layer(&mut actor, 3e-3, rng::derive_seed(config.seed, rng::stream::AGENT, 2));
        shrink_output_layer(&mut critic, 3e-3, rng::derive_seed(config.seed, rng::stream::AGENT, 3));
        Ok(DdpgAgent {
            actor_opt: AdamState::new(&actor, AdamConfig::with_learning_rate(config.actor_learning_rate)),
            critic_opt: AdamState::new(&critic, AdamConfig::with_learning_rate(config.critic_learning_rate)),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            bounds,
            state_dim,
            gamma: config.gamma,
            tau: config.tau,
            exploration_sigma: config.exploration_start,
            noise: rng::seeded(rng::derive_seed(config.seed, rng::stream::AGENT, 4)),
        })
    }

    /// Replaces actor and critic (and their targets) with stored weights.
    pub fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()> {
        if !snapshot.actor.same_shape(&self.actor) || !snapshot.critic.same_shape(&self.critic) {
            return Err(Error::invalid("snapshot", "network shapes differ from the agent"));
        }
        self.actor = snapshot.actor.clone();
        self.critic = snapshot.critic.clone();
        self.target_actor = snapshot.actor.clone();
        self.target_critic = snapshot.critic.clone();
        Ok(())
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        }
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.len()
    }

    fn to_action(&self, unit: Vec<f64>) -> Action {
        let value = unit
            .iter()
            .zip(&self.bounds)
            .map(|(u, b)| b.from_unit(*u))
            .collect();
        Action { unit, value }
    }

    /// Deterministic policy output.
    pub fn act_greedy(&self, state: &[f64]) -> Result<Action> {
        if state.len() != self.state_dim {
            return Err(Error::dim("agent state", self.state_dim, state.len()));
        }
        let unit = self.actor.forward(state)?;
        Ok(self.to_action(unit))
    }

    /// Policy output, plus Gaussian noise in unit space when exploring.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<Action> {
        if !explore || self.exploration_sigma == 0.0 {
            return self.act_greedy(state);
        }
        if state.len() != self.state_dim {
            return Err(Error::dim("agent state", self.state_dim, state.len()));
        }
        let sigma = self.exploration_sigma;
        let unit = self
            .actor
            .forward(state)?
            .into_iter()
            .map(|u| {
                let z: f64 = StandardNormal.sample(&mut self.noise);
                (u + sigma * z).clamp(-1.0, 1.0)
            })
            .collect();
        Ok(self.to_action(unit))
    }

    /// Uniform draw over the unit box.
    pub fn sample_uniform(&mut self) -> Vec<f64> {
        (0..self.action_dim())
            .map(|_| self.noise.random_range(-1.0..=1.0))
            .collect()
    }

    /// Standard normal draw scaled by the current exploration sigma.
    pub fn sample_noise(&mut self) -> Vec<f64> {
        let sigma = self.exploration_sigma;
        (0..self.action_dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.noise);
                sigma * z
            })
            .collect()
    }

    /// Policy output shifted by `noise` in unit space, then clamped.
    pub fn act_with_noise(&self, state: &[f64], noise: &[f64]) -> Result<Action> {
        if state.len() != self.state_dim {
            return Err(Error::dim("agent state", self.state_dim, state.len()));
        }
        if noise.len() != self.action_dim() {
            return Err(Error::dim("action noise", self.action_dim(), noise.len()));
        }
        let unit = self
            .actor
            .forward(state)?
            .into_iter()
            .zip(noise)
            .map(|(u, e)| (u + e).clamp(-1.0, 1.0))
            .collect();
        Ok(self.to_action(unit))
    }

    pub fn from_unit(&self, unit: Vec<f64>) -> Action {
        self.to_action(unit.into_iter().map(|u| u.clamp(-1.0, 1.0)).collect())
    }

    pub fn q_value(&self, state: &[f64], unit_action: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(&concat(state, unit_action))?[0])
    }

    /// `r + gamma (1 - done) Q'(s', mu'(s'))`.
    pub fn critic_target(&self, t: &Transition) -> Result<f64> {
        if t.done || self.gamma == 0.0 {
            return Ok(t.reward);
        }
        let next_action = self.target_actor.forward(&t.next_state)?;
        let next_q = self.target_critic.forward(&concat(&t.next_state, &next_action))?[0];
        Ok(t.reward + self.gamma * next_q)
    }

    /// One critic regression step, one policy-gradient step, then soft
    /// target updates.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer, batch_size: usize) -> Result<TrainStats> {
        let batch = buffer.sample(batch_size)?;
        self.train_on_batch(&batch)
    }

    pub fn train_on_batch(&mut self, batch: &[Transition]) -> Result<TrainStats> {
        if batch.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        let scale = 1.0 / batch.len() as f64;

        let mut critic_grads = Gradients::zeros_like(&self.critic);
        let mut critic_loss = 0.0;
        for t in batch {
            if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
                return Err(Error::dim("transition state", self.state_dim, t.state.len()));
            }
            if t.action.len() != self.action_dim() {
                return Err(Error::dim("transition action", self.action_dim(), t.action.len()));
            }
            let y = self.critic_target(t)?;
            let trace = self.critic.forward_trace(&concat(&t.state, &t.action))?;
            let err = trace.output()[0] - y;
            critic_loss += err * err;
            let bp = self.critic.backward_trace(&trace, &[2.0 * err * scale], false)?;
            critic_grads.add_assign(&bp.params);
        }
        critic_loss *= scale;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        self.critic_opt.step(&mut self.critic, &critic_grads)?;

        let mut actor_grads = Gradients::zeros_like(&self.actor);
        let mut objective = 0.0;
        for t in batch {
            let a_trace = self.actor.forward_trace(&t.state)?;
            let c_trace = self
                .critic
                .forward_trace(&concat(&t.state, a_trace.output()))?;
            objective += c_trace.output()[0];
            let dq = self.critic.backward_trace(&c_trace, &[1.0], false)?;
            // Ascend Q: descend on -Q.
            let grad_a: Vec<f64> = dq.input[self.state_dim..].iter().map(|g| -g * scale).collect();
            actor_grads.add_assign(&self.actor.backward_trace(&a_trace, &grad_a, false)?.params);
        }
        objective *= scale;
        if !objective.is_finite() {
            return Err(Error::NonFinite("actor objective"));
        }
        self.actor_opt.step(&mut self.actor, &actor_grads)?;

        self.target_critic.soft_update(&self.critic, self.tau)?;
        self.target_actor.soft_update(&self.actor, self.tau)?;
        Ok(TrainStats {
            critic_loss,
            actor_objective: objective,
        })
    }
}

fn shrink_output_layer(net: &mut Mlp, bound: f64, seed: u64) {
    let mut r = rng::seeded(seed);
    let mut layers = net.layers().to_vec();
    if let Some(last) = layers.last_mut() {
        last.weights
            .iter_mut()
            .for_each(|w| *w = r.random_range(-bound..=bound));
    }
    *net = Mlp::from_layers(layers).expect("shapes unchanged");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub seed: u64,
    /// Undiscounted sum of environment rewards.
    pub total_return: f64,
    /// Return discounted by the agent's gamma from the first step.
    pub discounted_return: f64,
    /// Mean critic loss over the episode's updates, `None` before training starts.
    pub critic_loss: Option<f64>,
    /// Mean greedy return over the validation seeds, when validated after this episode.
    pub validation_return: Option<f64>,
    pub exploration_sigma: f64,
    /// Environment actions in step order.
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub curve: Vec<EpisodeStats>,
    /// Weights after the episode with the best validation (or training) return.
    pub best: Option<AgentSnapshot>,
    pub best_episode: Option<usize>,
}

/// Runs `episodes` episodes of act / step / store / update.
///
/// `episode_seed` supplies the reset seed of each episode.
pub fn train<E: Environment>(
    agent: &mut DdpgAgent,
    env: &mut E,
    episodes: usize,
    config: &DdpgConfig,
    mut episode_seed: impl FnMut(usize) -> u64,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if env.observation_dim() != agent.state_dim() {
        return Err(Error::dim("environment observation", agent.state_dim(), env.observation_dim()));
    }
    if env.action_bounds().len() != agent.action_dim() {
        return Err(Error::dim("environment action", agent.action_dim(), env.action_bounds().len()));
    }
    let mut buffer = ReplayBuffer::new(
        config.buffer_capacity,
        rng::derive_seed(config.seed, rng::stream::AGENT, 5),
    )?;
    let mut curve = Vec::with_capacity(episodes);
    let mut best: Option<(f64, usize, AgentSnapshot)> = None;
    for episode in 0..episodes {
        agent.exploration_sigma = config.exploration_at(episode, episodes);
        let seed = episode_seed(episode);
        let warmup = episode < config.warmup_episodes;
        let held = match (config.noise, warmup) {
            (NoiseSchedule::PerEpisode, true) => Some(agent.sample_uniform()),
            (NoiseSchedule::PerEpisode, false) => Some(agent.sample_noise()),
            _ => None,
        };
        let mut obs = env.reset(seed)?;
        let mut rewards = Vec::new();
        let mut actions = Vec::new();
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        loop {
            let action = match (&held, warmup) {
                (Some(u), true) => agent.from_unit(u.clone()),
                (Some(e), false) => agent.act_with_noise(&obs, e)?,
                (None, true) => {
                    let u = agent.sample_uniform();
                    agent.from_unit(u)
                }
                (None, false) => agent.act(&obs, true)?,
            };
            let step = env.step(&action.value)?;
            rewards.push(step.reward);
            actions.push(action.value);
            buffer.store(Transition {
                state: obs,
                action: action.unit,
                reward: (step.reward + config.reward_offset) * config.reward_scale,
                next_state: step.observation.clone(),
                done: step.done,
            });
            if buffer.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    let stats = agent.train_step(&mut buffer, config.batch_size)?;
                    loss_sum += stats.critic_loss;
                    updates += 1;
                }
            }
            obs = step.observation;
            if step.done {
                break;
            }
        }
        let total: f64 = rewards.iter().sum();
        let validation_return = if config.validation_interval > 0 {
            if (episode + 1) % config.validation_interval == 0 || episode + 1 == episodes {
                Some(validate(agent, env, &config.validation_seeds)?)
            } else {
                None
            }
        } else {
            Some(total)
        };
        if let Some(score) = validation_return {
            if best.as_ref().is_none_or(|(r, _, _)| score > *r) {
                best = Some((score, episode, agent.snapshot()));
            }
        }
        let validation_return = validation_return.filter(|_| config.validation_interval > 0);
        curve.push(EpisodeStats {
            episode,
            seed,
            total_return: total,
            discounted_return: crate::env::discounted_return(&rewards, agent.gamma),
            critic_loss: (updates > 0).then(|| loss_sum / updates as f64),
            validation_return,
            exploration_sigma: agent.exploration_sigma,
            actions,
        });
    }
    let (best_episode, best) = match best {
        Some((_, e, s)) => (Some(e), Some(s)),
        None => (None, None),
    };
    Ok(TrainingOutcome {
        curve,
        best,
        best_episode,
    })
}

/// Mean undiscounted return of the greedy policy over `seeds`.
pub fn validate<E: Environment>(agent: &DdpgAgent, env: &mut E, seeds: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        let mut obs = env.reset(seed)?;
        loop {
            let step = env.step(&agent.act_greedy(&obs)?.value)?;
            total += step.reward;
            obs = step.observation;
            if step.done {
                break;
            }
        }
    }
    Ok(total / seeds.len().max(1) as f64)
}

/// Analytic test environment: constant observation, reward
/// `-sum_j (a_j - target_j)^2` per step; the optimum return is 0.
#[derive(Debug, Clone)]
pub struct QuadraticTarget {
    pub target: Vec<f64>,
    pub bounds: Vec<Interval>,
    pub episode_len: usize,
    steps: usize,
}

impl QuadraticTarget {
    pub fn new(target: Vec<f64>, bounds: Vec<Interval>, episode_len: usize) -> Self {
        QuadraticTarget {
            target,
            bounds,
            episode_len,
            steps: 0,
        }
    }
}

impl Environment for QuadraticTarget {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> Vec<Interval> {
        self.bounds.clone()
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        self.steps = 0;
        Ok(vec![1.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if action.len() != self.target.len() {
            return Err(Error::dim("action", self.target.len(), action.len()));
        }
        if self.steps >= self.episode_len {
            return Err(Error::EpisodeDone);
        }
        self.steps += 1;
        let reward = -action
            .iter()
            .zip(&self.target)
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>();
        Ok(EnvStep {
            observation: vec![1.0],
            reward,
            done: self.steps == self.episode_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(reward: f64, done: bool) -> Transition {
        Transition {
            state: vec![0.1, -0.2],
            action: vec![0.3],
            reward,
            next_state: vec![0.4, 0.5],
            done,
        }
    }

    fn agent(config: &DdpgConfig) -> DdpgAgent {
        DdpgAgent::new(2, vec![Interval::new(-2.0, 4.0)], config).unwrap()
    }

    #[test]
    fn zero_actor_acts_at_midpoints() {
        let bounds = vec![
            Interval::new(0.05, 2.0),
            Interval::new(0.05, 5.0),
            Interval::new(0.0, core::f64::consts::PI),
        ];
        let mut a = DdpgAgent::new(19, bounds.clone(), &DdpgConfig::default()).unwrap();
        a.actor = Mlp::zeros(
            &[19, 64, 64, 3],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
        )
        .unwrap();
        let act = a.act(&[0.3; 19], false).unwrap();
        for (v, b) in act.value.iter().zip(&bounds) {
            assert!((v - b.midpoint()).abs() < 1e-15);
        }
        assert_eq!(act, a.act(&[0.3; 19], false).unwrap());
        assert!(a.act(&[0.3; 18], false).is_err());
    }

    #[test]
    fn noisy_actions_stay_in_bounds() {
        let mut a = agent(&DdpgConfig {
            exploration_start: 5.0,
            ..DdpgConfig::default()
        });
        for i in 0..500 {
            let act = a.act(&[i as f64 * 0.01, -1.0], true).unwrap();
            assert!(a.bounds()[0].contains(act.value[0]));
            assert!(act.unit[0].abs() <= 1.0);
        }
    }

    #[test]
    fn buffer_fifo_and_errors() {
        let mut b = ReplayBuffer::new(2, 0).unwrap();
        assert!(matches!(b.sample(1), Err(Error::InsufficientData { .. })));
        b.store(transition(1.0, false));
        b.store(transition(2.0, false));
        b.store(transition(3.0, false));
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().reward, 2.0);
        assert_eq!(b.get(1).unwrap().reward, 3.0);
        assert!(ReplayBuffer::new(0, 0).is_err());
    }

    #[test]
    fn buffer_sampling_is_seeded() {
        let fill = |seed| {
            let mut b = ReplayBuffer::new(100, seed).unwrap();
            for i in 0..100 {
                b.store(transition(i as f64, false));
            }
            b
        };
        let mut a = fill(3);
        let mut b = fill(3);
        assert_eq!(a.sample_indices(32).unwrap(), b.sample_indices(32).unwrap());
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        let n = 50;
        let mut b = ReplayBuffer::new(n, 21).unwrap();
        for i in 0..n {
            b.store(transition(i as f64, false));
        }
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws / n {
            for i in b.sample_indices(n).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 5.0 * sd, "{c}");
        }
    }

    #[test]
    fn soft_update_contracts_toward_online() {
        let a = agent(&DdpgConfig::default());
        let online = Mlp::new(&[3, 4, 1], &[Activation::Relu, Activation::Identity], 1).unwrap();
        let mut target = Mlp::new(&[3, 4, 1], &[Activation::Relu, Activation::Identity], 2).unwrap();
        let gap = |t: &Mlp| {
            t.params()
                .zip(online.params())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let mut last = gap(&target);
        for _ in 0..50 {
            target.soft_update(&online, a.tau).unwrap();
            let g = gap(&target);
            assert!(g <= last);
            last = g;
        }
    }

    #[test]
    fn terminal_and_myopic_targets_are_rewards() {
        let a = agent(&DdpgConfig::default());
        assert_eq!(a.critic_target(&transition(-3.25, true)).unwrap(), -3.25);
        let myopic = agent(&DdpgConfig {
            gamma: 0.0,
            ..DdpgConfig::default()
        });
        assert_eq!(myopic.critic_target(&transition(1.5, false)).unwrap(), 1.5);
        let t = transition(1.5, false);
        let expected = 1.5
            + 0.95
                * a.target_critic
                    .forward(&concat(&t.next_state, &a.target_actor.forward(&t.next_state).unwrap()))
                    .unwrap()[0];
        assert_eq!(a.critic_target(&t).unwrap(), expected);
    }

    #[test]
    fn single_transition_regression_converges() {
        let mut a = agent(&DdpgConfig {
            gamma: 0.0,
            ..DdpgConfig::default()
        });
        let t = transition(0.75, false);
        let batch = vec![t.clone()];
        let mut steps = 0;
        while (a.q_value(&t.state, &t.action).unwrap() - 0.75).abs() >= 1e-3 {
            a.train_on_batch(&batch).unwrap();
            steps += 1;
            assert!(steps <= 5000, "critic did not converge");
        }
    }

    #[test]
    fn exploration_schedule_hits_floor() {
        let c = DdpgConfig::default();
        assert_eq!(c.exploration_at(0, 10), 0.2);
        assert_eq!(c.exploration_at(9, 10), 0.02);
        assert_eq!(c.exploration_at(0, 1), 0.02);
    }

    #[test]
    fn zero_episodes_leave_agent_untouched() {
        let cfg = DdpgConfig::default();
        let mut a = DdpgAgent::new(1, vec![Interval::new(-1.0, 1.0)], &cfg).unwrap();
        let before = a.snapshot();
        let mut env = QuadraticTarget::new(vec![0.3], vec![Interval::new(-1.0, 1.0)], 5);
        let out = train(&mut a, &mut env, 0, &cfg, |e| e as u64).unwrap();
        assert!(out.curve.is_empty());
        assert!(out.best.is_none());
        assert_eq!(a.snapshot(), before);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = DdpgConfig {
            batch_size: 8,
            ..DdpgConfig::default()
        };
        let run = || {
            let mut a = DdpgAgent::new(1, vec![Interval::new(-1.0, 1.0)], &cfg).unwrap();
            let mut env = QuadraticTarget::new(vec![0.3], vec![Interval::new(-1.0, 1.0)], 5);
            train(&mut a, &mut env, 6, &cfg, |e| e as u64)
                .unwrap()
                .curve
                .iter()
                .map(|s| s.total_return)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_config_is_rejected() {
        for cfg in [
            DdpgConfig {
                tau: 0.0,
                ..DdpgConfig::default()
            },
            DdpgConfig {
                gamma: 1.5,
                ..DdpgConfig::default()
            },
            DdpgConfig {
                batch_size: 0,
                ..DdpgConfig::default()
            },
        ] {
            assert!(DdpgAgent::new(2, vec![Interval::new(0.0, 1.0)], &cfg).is_err());
        }
    }
}
