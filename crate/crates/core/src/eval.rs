//! Evaluation rollouts and attack metrics.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ddpg::{DdpgAgent, Interval};
use crate::detector::{summarize, PosteriorOracle, PosteriorPoint};
use crate::env::{discounted_return, AttackEnv};
use crate::rng::{self, Rng};
use crate::Result;

/// Chooses the environment action for a step; `None` leaves the frame clean.
pub trait AttackPolicy {
    fn action(&mut self, observation: &[f64]) -> Result<Option<Vec<f64>>>;
}

/// Never perturbs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAttack;

impl AttackPolicy for NoAttack {
    fn action(&mut self, _observation: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Draws every hyper-parameter uniformly from its bounds at each frame.
#[derive(Debug, Clone)]
pub struct RandomHyperparams {
    bounds: Vec<Interval>,
    rng: Rng,
}

impl RandomHyperparams {
    pub fn new(bounds: Vec<Interval>, seed: u64) -> Self {
        RandomHyperparams {
            bounds,
            rng: rng::seeded(seed),
        }
    }
}

impl AttackPolicy for RandomHyperparams {
    fn action(&mut self, _observation: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(Some(
            self.bounds
                .iter()
                .map(|b| self.rng.random_range(b.low..=b.high))
                .collect(),
        ))
    }
}

/// Deterministic actor output, no exploration noise.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a DdpgAgent);

impl AttackPolicy for Greedy<'_> {
    fn action(&mut self, observation: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(Some(self.0.act_greedy(observation)?.value))
    }
}

impl<P: AttackPolicy + ?Sized> AttackPolicy for &mut P {
    fn action(&mut self, observation: &[f64]) -> Result<Option<Vec<f64>>> {
        (**self).action(observation)
    }
}

/// One scored frame of an evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub time: f64,
    pub label: u8,
    pub clean_posterior: f64,
    pub attacked_posterior: f64,
    /// Reward of the step, `None` before the episode start.
    pub reward: Option<f64>,
    pub c: f64,
    /// `(sigma, F0, w0)` when the policy acted.
    pub action: Option<[f64; 3]>,
    pub perturbation: Vec<f64>,
    pub clean: Vec<f64>,
    pub compromised: Vec<f64>,
}

impl FrameRecord {
    pub fn max_abs_perturbation(&self) -> f64 {
        self.perturbation.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub fault_start: f64,
    pub threshold: f64,
    /// Every full detector window of the trace, in time order.
    pub frames: Vec<FrameRecord>,
    pub total_return: f64,
    pub discounted_return: f64,
}

/// Runs one evaluation episode on the trace seeded with `seed`.
///
/// Frames before the episode start are scored clean so that metrics cover the
/// whole trace.
pub fn rollout<D: PosteriorOracle, P: AttackPolicy>(
    env: &mut AttackEnv<D>,
    policy: &mut P,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut state = env.reset(seed)?;
    let trace = env.trace().expect("reset").clone();
    let threshold = env.threshold();
    let mut frames = Vec::with_capacity(trace.len());
    for (t, p) in env.clean_prefix()? {
        frames.push(FrameRecord {
            frame: t,
            time: trace.times[t],
            label: trace.labels[t],
            clean_posterior: p,
            attacked_posterior: p,
            reward: None,
            c: crate::env::misdirection(trace.labels[t], p),
            action: None,
            perturbation: alloc::vec![0.0; trace.bus_count()],
            clean: trace.frames[t].clone(),
            compromised: trace.frames[t].clone(),
        });
    }
    let mut rewards = Vec::new();
    while !env.is_done() {
        let obs = env.observation_of(&state);
        let choice = policy.action(&obs)?;
        let acted = choice.is_some();
        let out = match choice {
            Some(a) => env.step(&a)?,
            None => env.step_idle()?,
        };
        rewards.push(out.reward);
        frames.push(FrameRecord {
            frame: out.info.frame,
            time: out.info.time,
            label: out.info.label,
            clean_posterior: out.info.clean_posterior,
            attacked_posterior: out.info.attacked_posterior,
            reward: Some(out.reward),
            c: out.next_state.c,
            action: acted.then_some(out.info.action),
            perturbation: out.info.perturbation.clone(),
            clean: trace.frames[out.info.frame].clone(),
            compromised: out.info.compromised.clone(),
        });
        state = out.next_state;
    }
    Ok(EpisodeRecord {
        seed,
        fault_start: trace.fault_start,
        threshold,
        frames,
        total_return: rewards.iter().sum(),
        discounted_return: discounted_return(&rewards, env.config().reward.lambda),
    })
}

/// Detection quality with and without the attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    /// Fraction of post-fault frames whose attacked posterior is below the threshold.
    pub evasion_success_rate: f64,
    /// Mean of `clean - attacked` posterior over post-fault frames.
    pub mean_posterior_drop: f64,
    pub max_abs_perturbation: f64,
    /// Mean delay in seconds over detected episodes; `None` if none was detected.
    pub detection_delay_clean: Option<f64>,
    pub detection_delay_attacked: Option<f64>,
}

fn series(ep: &EpisodeRecord, attacked: bool) -> Vec<PosteriorPoint> {
    ep.frames
        .iter()
        .map(|f| PosteriorPoint {
            time: f.time,
            posterior: if attacked {
                f.attacked_posterior
            } else {
                f.clean_posterior
            },
            label: f.label,
        })
        .collect()
}

fn mean_some(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Pools frames over `episodes`; delays are averaged per episode.
pub fn attack_metrics(episodes: &[EpisodeRecord]) -> AttackMetrics {
    let mut frames = 0usize;
    let mut clean_ok = 0usize;
    let mut attacked_ok = 0usize;
    let mut post = 0usize;
    let mut evaded = 0usize;
    let mut drop = 0.0;
    let mut max_abs: f64 = 0.0;
    for ep in episodes {
        for f in &ep.frames {
            let positive = f.label == 1;
            frames += 1;
            clean_ok += usize::from((f.clean_posterior >= ep.threshold) == positive);
            attacked_ok += usize::from((f.attacked_posterior >= ep.threshold) == positive);
            if positive {
                post += 1;
                evaded += usize::from(f.attacked_posterior < ep.threshold);
                drop += f.clean_posterior - f.attacked_posterior;
            }
            max_abs = max_abs.max(f.max_abs_perturbation());
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let delay = |attacked: bool| {
        mean_some(
            episodes
                .iter()
                .map(|ep| summarize(&series(ep, attacked), ep.threshold, ep.fault_start).detection_delay),
        )
    };
    AttackMetrics {
        clean_accuracy: ratio(clean_ok, frames),
        attacked_accuracy: ratio(attacked_ok, frames),
        evasion_success_rate: ratio(evaded, post),
        mean_posterior_drop: if post == 0 { 0.0 } else { drop / post as f64 },
        max_abs_perturbation: max_abs,
        detection_delay_clean: delay(false),
        detection_delay_attacked: delay(true),
    }
}

/// Runs one episode per seed and returns the records in seed order.
pub fn evaluate_policy<D: PosteriorOracle, P: AttackPolicy>(
    env: &mut AttackEnv<D>,
    policy: &mut P,
    seeds: &[u64],
) -> Result<Vec<EpisodeRecord>> {
    seeds.iter().map(|&s| rollout(env, policy, s)).collect()
}
