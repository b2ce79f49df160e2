//! The attack MDP.
//!
//! Each step the agent picks Gabor hyper-parameters `(sigma, F0, w0)`. The
//! environment turns them into a per-bus perturbation of the current frame,
//! keeps it on the compromisable buses, clamps it to `[-epsilon, epsilon]`,
//! queries the detector on the compromised window and scores the result with
//!
//! `R = c - sum_i exp(k0 (x_i - x_hat)) - sum_i exp(k0 n_i)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ddpg::{EnvStep, Environment, Interval};
use crate::detector::{PosteriorOracle, FEATURE_SCALE};
use crate::gabor::{self, Domain, GaborKernelParams, ImpulseLayout};
use crate::rng;
use crate::trace::{generate_trace, MeasurementTrace, TraceScenario};
use crate::{Error, Result};

/// Exponent arguments in the reward are clamped to this magnitude.
pub const EXPONENT_LIMIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSeedPolicy {
    /// One impulse layout for every episode, drawn from `field_seed`.
    Fixed,
    /// A fresh layout per episode, derived from the episode seed.
    PerEpisode,
    /// A fresh layout every step.
    PerStep,
}

/// First frame the attacker may perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackOnset {
    /// From the first full detector window.
    TraceStart,
    /// From the first contingency frame, together with the physical fault.
    FaultStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Exponent coefficient (1/pu).
    pub k0: f64,
    /// Nominal measurement value (pu).
    pub x_hat: f64,
    /// Discount factor.
    pub lambda: f64,
    /// Maximum episode length in frames.
    pub horizon_frames: usize,
    /// Use `|.|` inside both exponents.
    pub penalty_abs: bool,
    /// Penalize compromised rather than ground-truth measurements.
    pub use_compromised: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            k0: 10.0,
            x_hat: 1.0,
            lambda: 0.95,
            horizon_frames: 100,
            penalty_abs: false,
            use_compromised: false,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !self.k0.is_finite() {
            return Err(Error::invalid("k0", "must be finite"));
        }
        if !(self.x_hat > 0.0 && self.x_hat.is_finite()) {
            return Err(Error::invalid("x_hat", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("lambda", "must lie in (0, 1]"));
        }
        if self.horizon_frames == 0 {
            return Err(Error::invalid("horizon_frames", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Perturbation bound (pu).
    pub epsilon: f64,
    /// Buses the attacker can tamper with.
    pub access_mask: Vec<bool>,
    /// Bounds for `sigma`, `F0` and `w0`, in that order.
    pub action_bounds: [Interval; 3],
    pub reward: RewardParams,
    pub impulse_density: f64,
    pub field_seed_policy: FieldSeedPolicy,
    pub field_seed: u64,
    pub sigma_floor: f64,
    /// Kernel magnitude `K`, not under agent control.
    pub kernel_magnitude: f64,
    pub onset: AttackOnset,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.01,
            access_mask: vec![true; 9],
            action_bounds: [
                Interval::new(0.05, 2.0),
                Interval::new(0.05, 5.0),
                Interval::new(0.0, PI),
            ],
            reward: RewardParams::default(),
            impulse_density: gabor::default_density(),
            field_seed_policy: FieldSeedPolicy::PerEpisode,
            field_seed: 0,
            sigma_floor: gabor::DEFAULT_SIGMA_FLOOR,
            kernel_magnitude: 1.0,
            onset: AttackOnset::TraceStart,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, bus_count: usize) -> Result<()> {
        self.validate_parameters(bus_count)?;
        if !self.access_mask.iter().any(|&a| a) {
            return Err(Error::invalid("access_mask", "no bus is accessible"));
        }
        Ok(())
    }

    /// Everything except the non-empty access mask; an all-closed mask is a
    /// valid no-op attack for the environment itself.
    pub fn validate_parameters(&self, bus_count: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if self.access_mask.len() != bus_count {
            return Err(Error::invalid(
                "access_mask",
                format!("has {} entries for {bus_count} buses", self.access_mask.len()),
            ));
        }
        for (name, b) in ["sigma", "F0", "omega0"].iter().zip(&self.action_bounds) {
            if !(b.low < b.high && b.low.is_finite() && b.high.is_finite()) {
                return Err(Error::invalid(
                    "action_bounds",
                    format!("{name} bounds [{}, {}] are empty", b.low, b.high),
                ));
            }
        }
        if self.action_bounds[0].low < 0.0 || self.action_bounds[1].low < 0.0 {
            return Err(Error::invalid("action_bounds", "sigma and F0 must be non-negative"));
        }
        let w = &self.action_bounds[2];
        // w0 = pi is folded onto 0, where the kernel is identical.
        if w.low < 0.0 || w.high > PI {
            return Err(Error::invalid("action_bounds", "omega0 bounds must lie in [0, pi]"));
        }
        if !(self.impulse_density > 0.0 && self.impulse_density.is_finite()) {
            return Err(Error::invalid("impulse_density", "must be positive"));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor", "must be positive"));
        }
        if !self.kernel_magnitude.is_finite() {
            return Err(Error::invalid("kernel_magnitude", "must be finite"));
        }
        self.reward.validate()
    }

    /// Impulse layout drawn from `seed` with this config's density and padding.
    pub fn layout_for(&self, seed: u64) -> Result<ImpulseLayout> {
        ImpulseLayout::generate(
            self.impulse_density,
            Domain::measurement_plane(),
            gabor::padding_for(self.action_bounds[0].low, self.sigma_floor),
            self.sigma_floor,
            seed,
        )
    }
}

/// `s_k = [x_k, n_k, c_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Absolute ground-truth measurements (pu).
    pub x: Vec<f64>,
    /// Perturbation applied at the previous step (pu).
    pub n: Vec<f64>,
    /// Detector misdirection after the previous step.
    pub c: f64,
}

impl AgentState {
    pub fn dim(&self) -> usize {
        self.x.len() + self.n.len() + 1
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(&self.x);
        v.extend(&self.n);
        v.push(self.c);
        v
    }

    /// Flattened state rescaled to O(1) for the networks.
    pub fn observation(&self, x_hat: f64, epsilon: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(self.x.iter().map(|x| (x - x_hat) / FEATURE_SCALE));
        v.extend(self.n.iter().map(|n| n / epsilon));
        v.push(self.c);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Index of the perturbed frame in the trace.
    pub frame: usize,
    pub time: f64,
    pub label: u8,
    /// `(sigma, F0, w0)` after clamping and orientation folding.
    pub action: [f64; 3],
    /// Whether the requested action was outside the bounds.
    pub clamped: bool,
    /// Applied perturbation per bus (pu).
    pub perturbation: Vec<f64>,
    pub compromised: Vec<f64>,
    pub clean_posterior: f64,
    pub attacked_posterior: f64,
    /// Reward exponents that hit the clamp at this step.
    pub clamped_exponents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: AgentState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Component-wise clamp into `[-epsilon, epsilon]`.
pub fn project_perturbation(n: &[f64], epsilon: f64) -> Vec<f64> {
    n.iter().map(|v| v.clamp(-epsilon, epsilon)).collect()
}

/// `|label - attacked posterior|`.
pub fn misdirection(label: u8, attacked_posterior: f64) -> f64 {
    (f64::from(label) - attacked_posterior).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEval {
    pub value: f64,
    pub clamped_exponents: usize,
}

/// Reward of one step; exponent arguments are clamped to `+-EXPONENT_LIMIT`.
pub fn reward(c: f64, x: &[f64], n: &[f64], params: &RewardParams) -> Result<RewardEval> {
    if x.len() != n.len() {
        return Err(Error::dim("reward", x.len(), n.len()));
    }
    let mut clamped = 0;
    let mut term = |arg: f64| {
        let arg = if params.penalty_abs { arg.abs() } else { arg };
        let limited = arg.clamp(-EXPONENT_LIMIT, EXPONENT_LIMIT);
        if limited != arg {
            clamped += 1;
        }
        libm::exp(limited)
    };
    let measurement: f64 = x.iter().map(|xi| term(params.k0 * (xi - params.x_hat))).sum();
    let perturbation: f64 = n.iter().map(|ni| term(params.k0 * ni)).sum();
    Ok(RewardEval {
        value: c - measurement - perturbation,
        clamped_exponents: clamped,
    })
}

/// `sum_k lambda^k r_k`.
pub fn discounted_return(rewards: &[f64], lambda: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += weight * r;
        weight *= lambda;
    }
    total
}

#[derive(Debug, Clone)]
struct Episode {
    trace: MeasurementTrace,
    compromised: Vec<Vec<f64>>,
    /// Frame the episode began at.
    start: usize,
    /// Frame the next step perturbs.
    frame: usize,
    steps: usize,
    length: usize,
    seed: u64,
    layout: Option<ImpulseLayout>,
    state: AgentState,
}

/// Attack environment over one trace per episode.
///
/// The detector is reachable only through [`PosteriorOracle`].
pub struct AttackEnv<D> {
    scenario: TraceScenario,
    detector: D,
    config: AttackConfig,
    fixed_layout: Option<ImpulseLayout>,
    episode: Option<Episode>,
    clamped_exponents: usize,
}

impl<D: PosteriorOracle> AttackEnv<D> {
    pub fn new(scenario: TraceScenario, detector: D, config: AttackConfig) -> Result<Self> {
        scenario.validate()?;
        let buses = scenario.case.bus_count();
        config.validate_parameters(buses)?;
        if detector.bus_count() != buses {
            return Err(Error::dim("detector bus count", buses, detector.bus_count()));
        }
        let fixed_layout = match config.field_seed_policy {
            FieldSeedPolicy::Fixed => Some(config.layout_for(config.field_seed)?),
            _ => None,
        };
        Ok(AttackEnv {
            scenario,
            detector,
            config,
            fixed_layout,
            episode: None,
            clamped_exponents: 0,
        })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    pub fn scenario(&self) -> &TraceScenario {
        &self.scenario
    }

    pub fn bus_count(&self) -> usize {
        self.scenario.case.bus_count()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.bus_count() + 1
    }

    pub fn threshold(&self) -> f64 {
        self.detector.threshold()
    }

    /// Total reward exponents clamped since construction.
    pub fn clamped_exponents(&self) -> usize {
        self.clamped_exponents
    }

    pub fn trace(&self) -> Option<&MeasurementTrace> {
        self.episode.as_ref().map(|e| &e.trace)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.steps >= e.length)
    }

    pub fn observation_of(&self, state: &AgentState) -> Vec<f64> {
        state.observation(self.config.reward.x_hat, self.config.epsilon)
    }

    /// Starts an episode on a freshly simulated trace seeded with `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<AgentState> {
        let trace = generate_trace(&self.scenario.with_seed(seed))?;
        self.reset_with_trace(trace, seed)
    }

    /// Starts an episode on a given trace.
    pub fn reset_with_trace(&mut self, trace: MeasurementTrace, seed: u64) -> Result<AgentState> {
        let window = self.detector.window();
        if trace.bus_count() != self.bus_count() {
            return Err(Error::dim("trace bus count", self.bus_count(), trace.bus_count()));
        }
        if window == 0 || trace.len() < window {
            return Err(Error::TraceTooShort {
                trace: 0,
                len: trace.len(),
                window,
            });
        }
        let onset = match self.config.onset {
            AttackOnset::TraceStart => 0,
            AttackOnset::FaultStart => trace.onset_index().unwrap_or(trace.len()),
        };
        let start = onset.max(window - 1);
        if start >= trace.len() {
            return Err(Error::InsufficientData {
                needed: start + 1,
                available: trace.len(),
            });
        }
        let length = self.config.reward.horizon_frames.min(trace.len() - start);
        let layout = match self.config.field_seed_policy {
            FieldSeedPolicy::Fixed => None,
            FieldSeedPolicy::PerEpisode => {
                Some(self.config.layout_for(rng::derive_seed(seed, rng::stream::FIELD, 0))?)
            }
            FieldSeedPolicy::PerStep => None,
        };
        let clean = self.detector.query(&trace.frames[start + 1 - window..=start])?;
        let state = AgentState {
            x: trace.frames[start].iter().map(|v| v.abs()).collect(),
            n: vec![0.0; self.bus_count()],
            c: misdirection(trace.labels[start], clean),
        };
        self.episode = Some(Episode {
            compromised: trace.frames.clone(),
            trace,
            start,
            frame: start,
            steps: 0,
            length,
            seed,
            layout,
            state: state.clone(),
        });
        Ok(state)
    }

    /// Clean posteriors for the full windows before the episode start.
    pub fn clean_prefix(&self) -> Result<Vec<(usize, f64)>> {
        let ep = self.episode.as_ref().ok_or(Error::NotReset)?;
        let window = self.detector.window();
        (window - 1..ep.start)
            .map(|t| Ok((t, self.detector.query(&ep.trace.frames[t + 1 - window..=t])?)))
            .collect()
    }

    fn clamp_action(&self, action: &[f64]) -> Result<([f64; 3], bool)> {
        if action.len() != 3 {
            return Err(Error::dim("action", 3, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let mut out = [0.0; 3];
        let mut clamped = false;
        for ((o, a), b) in out.iter_mut().zip(action).zip(&self.config.action_bounds) {
            *o = a.clamp(b.low, b.high);
            clamped |= *o != *a;
        }
        Ok((out, clamped))
    }

    /// Applies the perturbation produced by `action` to the current frame.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let (clamped_action, clamped) = self.clamp_action(action)?;
        let kernel = GaborKernelParams::with_wrapped_orientation(
            self.config.kernel_magnitude,
            clamped_action[0],
            clamped_action[1],
            clamped_action[2],
        )?;
        let ep = self.episode.as_ref().ok_or(Error::NotReset)?;
        if ep.steps >= ep.length {
            return Err(Error::EpisodeDone);
        }
        let layout_owned;
        let layout = match self.config.field_seed_policy {
            FieldSeedPolicy::Fixed => self.fixed_layout.as_ref().expect("fixed layout"),
            FieldSeedPolicy::PerEpisode => ep.layout.as_ref().expect("episode layout"),
            FieldSeedPolicy::PerStep => {
                layout_owned = self.config.layout_for(rng::derive_seed(
                    ep.seed,
                    rng::stream::FIELD,
                    ep.steps as u64 + 1,
                ))?;
                &layout_owned
            }
        };
        let field = layout.field(kernel)?;
        let raw = gabor::perturbation_vector(&field, &ep.trace.frames[ep.frame]);
        let action = [kernel.sigma, kernel.frequency, kernel.orientation];
        self.apply(raw, action, clamped)
    }

    /// Advances one frame without perturbing anything.
    pub fn step_idle(&mut self) -> Result<StepOutcome> {
        let n = vec![0.0; self.bus_count()];
        self.apply(n, [0.0; 3], false)
    }

    fn apply(&mut self, raw: Vec<f64>, action: [f64; 3], clamped: bool) -> Result<StepOutcome> {
        let window = self.detector.window();
        let epsilon = self.config.epsilon;
        let params = self.config.reward;
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        if ep.steps >= ep.length {
            return Err(Error::EpisodeDone);
        }
        let f = ep.frame;
        let masked: Vec<f64> = raw
            .iter()
            .zip(&self.config.access_mask)
            .map(|(v, &open)| if open { *v } else { 0.0 })
            .collect();
        let n = project_perturbation(&masked, epsilon);
        let clean_frame = &ep.trace.frames[f];
        let compromised: Vec<f64> = clean_frame.iter().zip(&n).map(|(x, n)| x + n).collect();
        ep.compromised[f] = compromised.clone();

        let clean_posterior = self.detector.query(&ep.trace.frames[f + 1 - window..=f])?;
        let attacked_posterior = self.detector.query(&ep.compromised[f + 1 - window..=f])?;
        let label = ep.trace.labels[f];
        let c = misdirection(label, attacked_posterior);
        let x_for_reward: Vec<f64> = if params.use_compromised {
            compromised.iter().map(|v| v.abs()).collect()
        } else {
            clean_frame.iter().map(|v| v.abs()).collect()
        };
        let r = reward(c, &x_for_reward, &n, &params)?;
        self.clamped_exponents += r.clamped_exponents;

        let info = StepInfo {
            frame: f,
            time: ep.trace.times[f],
            label,
            action,
            clamped,
            perturbation: n.clone(),
            compromised,
            clean_posterior,
            attacked_posterior,
            clamped_exponents: r.clamped_exponents,
        };
        ep.steps += 1;
        ep.frame += 1;
        let done = ep.steps >= ep.length;
        let next_frame = ep.frame.min(ep.trace.len() - 1);
        let next_state = AgentState {
            x: ep.trace.frames[next_frame].iter().map(|v| v.abs()).collect(),
            n,
            c,
        };
        ep.state = next_state.clone();
        Ok(StepOutcome {
            next_state,
            reward: r.value,
            done,
            info,
        })
    }
}

impl<D: PosteriorOracle> Environment for AttackEnv<D> {
    fn observation_dim(&self) -> usize {
        self.state_dim()
    }

    fn action_bounds(&self) -> Vec<Interval> {
        self.config.action_bounds.to_vec()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let s = AttackEnv::reset(self, seed)?;
        Ok(self.observation_of(&s))
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let out = AttackEnv::step(self, action)?;
        Ok(EnvStep {
            observation: self.observation_of(&out.next_state),
            reward: out.reward,
            done: out.done,
        })
    }
}
