//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Every field has a default, so an empty file is a valid config. [`Plan`]
//! resolves a [`RunConfig`] against a master seed into the concrete settings
//! each stage runs with.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gabor_evasion_core::ddpg::{DdpgConfig, NoiseSchedule};
use gabor_evasion_core::detector::DetectorConfig;
use gabor_evasion_core::env::AttackConfig;
use gabor_evasion_core::rng::{derive_seed, stream};
use gabor_evasion_core::trace::{TraceScenario, IEEE9_FAULT_BUS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case::{line_column, load_case, shipped_case};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Case file; relative paths are taken from the config file's directory.
    /// The shipped nine-bus case when absent.
    pub case: Option<PathBuf>,
    pub dt: f64,
    pub horizon: f64,
    pub fault_start: f64,
    pub fault_bus: usize,
    pub fault_depth: f64,
    pub fault_freq: f64,
    pub fault_damping: f64,
    pub sensor_noise_std: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = TraceScenario::default();
        ScenarioSection {
            case: None,
            dt: s.dt,
            horizon: s.horizon,
            fault_start: s.fault_start,
            fault_bus: IEEE9_FAULT_BUS,
            fault_depth: s.fault_depth,
            fault_freq: s.fault_freq,
            fault_damping: s.fault_damping,
            sensor_noise_std: s.sensor_noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub hidden: Vec<usize>,
    pub window: usize,
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Simulated traces in the training pool.
    pub traces: usize,
    /// Fraction of traces used for training; the rest are the test split.
    pub train_ratio: f64,
    /// Extra traces on fresh seeds for the held-out report.
    pub held_out_traces: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSection {
            hidden: d.hidden,
            window: d.window,
            threshold: d.threshold,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            traces: 50,
            train_ratio: 0.8,
            held_out_traces: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub episodes: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Critic discount; the reward discount `lambda` when absent.
    pub gamma: Option<f64>,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub exploration_start: f64,
    pub exploration_end: f64,
    pub updates_per_step: usize,
    pub warmup_episodes: usize,
    pub noise: NoiseSchedule,
    pub validation_interval: usize,
    /// Number of greedy validation episodes, on seeds disjoint from training.
    pub validation_episodes: usize,
    pub reward_offset: f64,
    pub reward_scale: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        let d = DdpgConfig::default();
        AgentSection {
            episodes: 200,
            actor_hidden: d.actor_hidden,
            critic_hidden: d.critic_hidden,
            actor_learning_rate: d.actor_learning_rate,
            critic_learning_rate: d.critic_learning_rate,
            gamma: None,
            tau: d.tau,
            buffer_capacity: d.buffer_capacity,
            batch_size: d.batch_size,
            exploration_start: d.exploration_start,
            exploration_end: d.exploration_end,
            updates_per_step: d.updates_per_step,
            warmup_episodes: d.warmup_episodes,
            noise: d.noise,
            validation_interval: d.validation_interval,
            validation_episodes: 0,
            reward_offset: d.reward_offset,
            reward_scale: d.reward_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    RandomHyperparams,
    TrainedAgent,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::None,
        Baseline::RandomHyperparams,
        Baseline::TrainedAgent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::None => "none",
            Baseline::RandomHyperparams => "random-hyperparams",
            Baseline::TrainedAgent => "trained-agent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub episodes: usize,
    pub baselines: Vec<Baseline>,
    /// Explicit evaluation seeds; derived from the master seed when absent.
    pub seeds: Option<Vec<u64>>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            episodes: 10,
            baselines: Baseline::ALL.to_vec(),
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub detector: DetectorSection,
    pub attack: AttackConfig,
    pub agent: AgentSection,
    pub evaluation: EvaluationSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            anyhow::anyhow!("{origin}:{line}:{column}: {}", e.message().trim())
        })
    }

    /// Reads a config file and anchors a relative case path at its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        if let Some(case) = &config.scenario.case {
            if case.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.scenario.case = Some(base.join(case));
            }
        }
        Ok(config)
    }
}

/// A config resolved against its master seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub seed: u64,
    pub scenario: TraceScenario,
    pub detector: DetectorConfig,
    pub detector_traces: usize,
    pub train_ratio: f64,
    pub held_out_traces: usize,
    pub attack: AttackConfig,
    pub agent: DdpgConfig,
    pub episodes: usize,
    pub evaluation_seeds: Vec<u64>,
    pub baselines: Vec<Baseline>,
}

impl Plan {
    pub fn new(config: &RunConfig) -> anyhow::Result<Self> {
        let seed = config.run.seed;
        let s = &config.scenario;
        let case = match &s.case {
            Some(path) => load_case(path)?,
            None => shipped_case(),
        };
        let scenario = TraceScenario {
            case,
            dt: s.dt,
            horizon: s.horizon,
            fault_start: s.fault_start,
            fault_bus: s.fault_bus,
            fault_depth: s.fault_depth,
            fault_freq: s.fault_freq,
            fault_damping: s.fault_damping,
            sensor_noise_std: s.sensor_noise_std,
            seed: 0,
        };
        scenario.validate().context("invalid [scenario]")?;

        let d = &config.detector;
        let detector = DetectorConfig {
            hidden: d.hidden.clone(),
            window: d.window,
            threshold: d.threshold,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            seed,
        };
        if d.window == 0 || d.window >= scenario.frame_count() {
            bail!(
                "invalid [detector]: window {} must lie in 1..{}",
                d.window,
                scenario.frame_count()
            );
        }
        if !(d.threshold > 0.0 && d.threshold < 1.0) {
            bail!("invalid [detector]: threshold {} must lie in (0, 1)", d.threshold);
        }
        if d.traces < 2 {
            bail!("invalid [detector]: traces must be at least 2");
        }
        if !(d.train_ratio > 0.0 && d.train_ratio < 1.0) {
            bail!("invalid [detector]: train_ratio {} must lie in (0, 1)", d.train_ratio);
        }

        config
            .attack
            .validate(scenario.case.bus_count())
            .context("invalid [attack]")?;

        let a = &config.agent;
        let agent = DdpgConfig {
            actor_hidden: a.actor_hidden.clone(),
            critic_hidden: a.critic_hidden.clone(),
            actor_learning_rate: a.actor_learning_rate,
            critic_learning_rate: a.critic_learning_rate,
            gamma: a.gamma.unwrap_or(config.attack.reward.lambda),
            tau: a.tau,
            buffer_capacity: a.buffer_capacity,
            batch_size: a.batch_size,
            exploration_start: a.exploration_start,
            exploration_end: a.exploration_end,
            updates_per_step: a.updates_per_step,
            warmup_episodes: a.warmup_episodes,
            noise: a.noise,
            validation_interval: a.validation_interval,
            validation_seeds: (0..a.validation_episodes as u64)
                .map(|i| derive_seed(seed, stream::ATTACK_TRAIN, VALIDATION_INDEX + i))
                .collect(),
            reward_offset: a.reward_offset,
            reward_scale: a.reward_scale,
            seed,
        };
        agent.validate().context("invalid [agent]")?;

        let ev = &config.evaluation;
        let evaluation_seeds = match &ev.seeds {
            Some(seeds) => seeds.clone(),
            None => (0..ev.episodes as u64)
                .map(|i| derive_seed(seed, stream::ATTACK_EVAL, i))
                .collect(),
        };
        if evaluation_seeds.is_empty() {
            bail!("invalid [evaluation]: no evaluation episodes");
        }
        let mut baselines = ev.baselines.clone();
        baselines.sort();
        baselines.dedup();

        Ok(Plan {
            seed,
            scenario,
            detector,
            detector_traces: d.traces,
            train_ratio: d.train_ratio,
            held_out_traces: d.held_out_traces,
            attack: config.attack.clone(),
            agent,
            episodes: a.episodes,
            evaluation_seeds,
            baselines,
        })
    }

    /// SHA-256 of the resolved plan; independent of the output directory.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn detector_trace_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, stream::DETECTOR_TRACES, i as u64)
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, stream::DETECTOR_SPLIT, 0)
    }

    pub fn held_out_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, stream::ATTACK_EVAL, HELD_OUT_INDEX + i as u64)
    }

    pub fn training_seed(&self, episode: usize) -> u64 {
        derive_seed(self.seed, stream::ATTACK_TRAIN, episode as u64)
    }

    pub fn baseline_seed(&self, episode: usize) -> u64 {
        derive_seed(self.seed, stream::BASELINE, episode as u64)
    }
}

/// Index offsets that keep auxiliary seed sets clear of the per-episode ones.
const VALIDATION_INDEX: u64 = 1_000_000;
const HELD_OUT_INDEX: u64 = 1_000;
