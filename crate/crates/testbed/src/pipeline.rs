//! The pipeline stages behind each subcommand.
//!
//! Every stage reads and writes under one run directory and finishes by
//! writing `<stage>.manifest.json`, which lists each output with its SHA-256
//! next to the config hash and master seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use gabor_evasion_core::ddpg::{self, AgentSnapshot, DdpgAgent};
use gabor_evasion_core::detector::{evaluate_detector, train_detector, window_accuracy, DetectorModel, DetectorReport};
use gabor_evasion_core::env::{AttackEnv, FieldSeedPolicy};
use gabor_evasion_core::eval::{self, attack_metrics, AttackMetrics, AttackPolicy, EpisodeRecord, Greedy, NoAttack, RandomHyperparams};
use gabor_evasion_core::gabor::GaborKernelParams;
use gabor_evasion_core::rng::{derive_seed, stream};
use gabor_evasion_core::trace::{generate_trace, split_dataset, MeasurementTrace};
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, Plan};
use crate::formats::{self, AgentMetadata};

pub const DETECTOR_DIR: &str = "detector";
pub const AGENT_DIR: &str = "agent";
pub const EVALUATE_DIR: &str = "evaluate";
pub const DETECTOR_REPORT: &str = "detector/report.json";
pub const TRAINING_SUMMARY: &str = "agent/training.json";
pub const EVALUATION_SUMMARY: &str = "evaluate/summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

/// Collects the relative paths a stage writes.
struct Outputs<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(root: &'a Path) -> Self {
        Outputs {
            root,
            files: Vec::new(),
        }
    }

    fn path(&mut self, rel: impl Into<String>) -> PathBuf {
        let rel = rel.into();
        let p = self.root.join(&rel);
        self.files.push(rel);
        p
    }

    /// Checks every declared output and writes the manifest.
    fn finish(mut self, stage: &str, plan: &Plan) -> anyhow::Result<Manifest> {
        self.files.sort();
        self.files.dedup();
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let p = self.root.join(rel);
            let len = std::fs::metadata(&p)
                .with_context(|| format!("declared output {} was not written", p.display()))?
                .len();
            ensure!(len > 0, "declared output {} is empty", p.display());
            files.push(ManifestEntry {
                path: rel.clone(),
                sha256: formats::sha256_file(&p)?,
            });
        }
        let manifest = Manifest {
            stage: stage.to_string(),
            config_hash: plan.config_hash(),
            seed: plan.seed,
            files,
        };
        formats::write_json(&self.root.join(format!("{stage}.manifest.json")), &manifest)?;
        Ok(manifest)
    }
}

/// The traces the detector trains and tests on.
pub fn detector_traces(plan: &Plan) -> anyhow::Result<Vec<MeasurementTrace>> {
    (0..plan.detector_traces)
        .map(|i| Ok(generate_trace(&plan.scenario.with_seed(plan.detector_trace_seed(i)))?))
        .collect()
}

pub fn held_out_traces(plan: &Plan) -> anyhow::Result<Vec<MeasurementTrace>> {
    (0..plan.held_out_traces)
        .map(|i| Ok(generate_trace(&plan.scenario.with_seed(plan.held_out_seed(i)))?))
        .collect()
}

/// Writes the detector's trace pool as `traces/trace_NNN.csv`.
pub fn simulate(plan: &Plan, out: &Path) -> anyhow::Result<Manifest> {
    let mut outputs = Outputs::new(out);
    for (i, trace) in detector_traces(plan)?.iter().enumerate() {
        formats::write_trace_csv(&outputs.path(format!("traces/trace_{i:03}.csv")), trace)?;
    }
    formats::write_json(&outputs.path("traces/scenario.json"), &plan.scenario)?;
    outputs.finish("simulate", plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRunReport {
    pub config_hash: String,
    pub seed: u64,
    pub final_loss: f64,
    pub train_traces: Vec<usize>,
    pub test_traces: Vec<usize>,
    pub test_window_accuracy: f64,
    pub held_out_seeds: Vec<u64>,
    pub held_out_frame_accuracy: f64,
    pub held_out_false_positive_rate: f64,
    /// Worst delay over held-out traces; `None` if any went undetected.
    pub worst_detection_delay: Option<f64>,
    pub mean_detection_delay: Option<f64>,
    pub per_trace: Vec<DetectorReport>,
}

pub fn train_detector_stage(plan: &Plan, out: &Path) -> anyhow::Result<DetectorRunReport> {
    let traces = detector_traces(plan)?;
    let window = plan.detector.window;
    let split = split_dataset(&traces, window, plan.train_ratio, plan.split_seed())?;
    let buses = plan.scenario.case.bus_count();
    let (model, final_loss) = train_detector(&split.train, buses, &plan.detector)?;
    let test_window_accuracy = window_accuracy(&model, &split.test)?;

    let held_out = held_out_traces(plan)?;
    let summary = evaluate_detector(&model, &held_out)?;
    let report = DetectorRunReport {
        config_hash: plan.config_hash(),
        seed: plan.seed,
        final_loss,
        train_traces: split.train_traces,
        test_traces: split.test_traces,
        test_window_accuracy,
        held_out_seeds: (0..plan.held_out_traces).map(|i| plan.held_out_seed(i)).collect(),
        held_out_frame_accuracy: summary.frame_accuracy,
        held_out_false_positive_rate: summary.false_positive_rate,
        worst_detection_delay: summary.worst_detection_delay,
        mean_detection_delay: summary.mean_detection_delay,
        per_trace: summary.per_trace,
    };

    let mut outputs = Outputs::new(out);
    let dir = out.join(DETECTOR_DIR);
    formats::save_detector(&dir, &model)?;
    outputs.path(format!("{DETECTOR_DIR}/{}", formats::DETECTOR_NET));
    outputs.path(format!("{DETECTOR_DIR}/{}", formats::DETECTOR_META));
    formats::write_json(&outputs.path(DETECTOR_REPORT), &report)?;
    if let Some(first) = report.per_trace.first() {
        formats::write_posterior_csv(&outputs.path("detector/posterior.csv"), &first.posterior_series)?;
    }
    outputs.finish("train-detector", plan)?;
    Ok(report)
}

pub fn load_detector_checkpoint(out: &Path) -> anyhow::Result<DetectorModel> {
    let dir = out.join(DETECTOR_DIR);
    let missing: Vec<_> = [formats::DETECTOR_NET, formats::DETECTOR_META]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        bail!(
            "missing detector checkpoint ({}); run train-detector first",
            missing.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        );
    }
    formats::load_detector(&dir)
}

fn attack_env<'d>(plan: &Plan, detector: &'d DetectorModel) -> anyhow::Result<AttackEnv<&'d DetectorModel>> {
    Ok(AttackEnv::new(plan.scenario.clone(), detector, plan.attack.clone())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub best_episode: Option<usize>,
    pub final_exploration_sigma: Option<f64>,
    /// Mean undiscounted return of the first and last (up to) ten episodes.
    pub first_mean_return: Option<f64>,
    pub last_mean_return: Option<f64>,
    pub actions_within_bounds: bool,
    pub clamped_reward_exponents: usize,
}

pub fn train_attacker_stage(plan: &Plan, out: &Path) -> anyhow::Result<TrainingSummary> {
    let detector = load_detector_checkpoint(out)?;
    let mut env = attack_env(plan, &detector)?;
    let bounds = plan.attack.action_bounds.to_vec();
    let mut agent = DdpgAgent::new(env.state_dim(), bounds.clone(), &plan.agent)?;
    let outcome = ddpg::train(&mut agent, &mut env, plan.episodes, &plan.agent, |e| plan.training_seed(e))?;
    let kept = outcome.best.clone().unwrap_or_else(|| agent.snapshot());

    let curve = &outcome.curve;
    let mean = |s: &[ddpg::EpisodeStats]| {
        (!s.is_empty()).then(|| s.iter().map(|e| e.total_return).sum::<f64>() / s.len() as f64)
    };
    let k = curve.len().min(10);
    let summary = TrainingSummary {
        config_hash: plan.config_hash(),
        seed: plan.seed,
        episodes: plan.episodes,
        best_episode: outcome.best_episode,
        final_exploration_sigma: curve.last().map(|e| e.exploration_sigma),
        first_mean_return: mean(&curve[..k]),
        last_mean_return: mean(&curve[curve.len() - k..]),
        actions_within_bounds: curve
            .iter()
            .flat_map(|e| &e.actions)
            .all(|a| a.iter().zip(&bounds).all(|(v, b)| b.contains(*v))),
        clamped_reward_exponents: env.clamped_exponents(),
    };

    let mut outputs = Outputs::new(out);
    let meta = AgentMetadata {
        state_dim: agent.state_dim(),
        bounds,
        gamma: agent.gamma,
        tau: agent.tau,
        seed: plan.agent.seed,
        episodes: plan.episodes,
        best_episode: outcome.best_episode,
    };
    formats::save_agent(&out.join(AGENT_DIR), &kept, &meta)?;
    for f in [formats::AGENT_ACTOR, formats::AGENT_CRITIC, formats::AGENT_META] {
        outputs.path(format!("{AGENT_DIR}/{f}"));
    }
    formats::write_learning_curve(&outputs.path("agent/learning_curve.csv"), curve)?;
    formats::write_actions_csv(&outputs.path("agent/actions.csv"), curve)?;
    formats::write_json(&outputs.path(TRAINING_SUMMARY), &summary)?;
    outputs.finish("train-attacker", plan)?;
    Ok(summary)
}

pub fn load_agent_checkpoint(plan: &Plan, out: &Path, state_dim: usize) -> anyhow::Result<DdpgAgent> {
    let dir = out.join(AGENT_DIR);
    if !dir.join(formats::AGENT_META).exists() {
        bail!("missing agent checkpoint in {}; run train-attacker first", dir.display());
    }
    let (snapshot, meta): (AgentSnapshot, AgentMetadata) = formats::load_agent(&dir)?;
    ensure!(
        meta.state_dim == state_dim,
        "agent expects {} state values, environment has {state_dim}",
        meta.state_dim
    );
    let mut agent = DdpgAgent::new(state_dim, meta.bounds, &plan.agent)?;
    agent.restore(&snapshot)?;
    Ok(agent)
}

/// Flat metrics document for one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(flatten)]
    pub metrics: AttackMetrics,
    pub baseline: Baseline,
    pub episodes: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub evasion_success_rate: f64,
    pub mean_posterior_drop: f64,
    pub attacked_accuracy: f64,
    pub max_abs_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Seeds where the trained agent's evasion rate is strictly higher.
    pub trained_wins: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub config_hash: String,
    pub seed: u64,
    pub evaluation_seeds: Vec<u64>,
    pub baselines: Vec<Baseline>,
    pub warnings: Vec<String>,
    pub paired: Option<PairedComparison>,
}

/// Baseline results kept in memory for callers of [`evaluate_stage`].
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub baseline: Baseline,
    pub episodes: Vec<EpisodeRecord>,
    pub metrics: AttackMetrics,
    pub per_seed: Vec<SeedMetrics>,
}

fn seed_collisions(plan: &Plan) -> Vec<String> {
    let mut used = BTreeSet::new();
    used.extend((0..plan.episodes).map(|e| plan.training_seed(e)));
    used.extend(plan.agent.validation_seeds.iter().copied());
    used.extend((0..plan.detector_traces).map(|i| plan.detector_trace_seed(i)));
    used.extend((0..plan.held_out_traces).map(|i| plan.held_out_seed(i)));
    let hits: Vec<u64> = plan
        .evaluation_seeds
        .iter()
        .copied()
        .filter(|s| used.contains(s))
        .collect();
    if hits.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "evaluation seeds {hits:?} also appear in training or detector seeds"
        )]
    }
}

fn run_episodes<P: AttackPolicy>(
    env: &mut AttackEnv<&DetectorModel>,
    seeds: &[u64],
    mut policy_for: impl FnMut(usize) -> P,
) -> anyhow::Result<Vec<EpisodeRecord>> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok(eval::rollout(env, &mut policy_for(i), s)?))
        .collect()
}

pub fn evaluate_stage(plan: &Plan, out: &Path) -> anyhow::Result<(EvaluationSummary, Vec<BaselineRun>)> {
    let detector = load_detector_checkpoint(out)?;
    let mut env = attack_env(plan, &detector)?;
    let agent = if plan.baselines.contains(&Baseline::TrainedAgent) {
        Some(load_agent_checkpoint(plan, out, env.state_dim())?)
    } else {
        None
    };
    let warnings = seed_collisions(plan);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let seeds = &plan.evaluation_seeds;
    let bounds = plan.attack.action_bounds.to_vec();

    let mut runs = Vec::new();
    for &baseline in &plan.baselines {
        let episodes = match baseline {
            Baseline::None => run_episodes(&mut env, seeds, |_| NoAttack)?,
            Baseline::RandomHyperparams => run_episodes(&mut env, seeds, |i| {
                RandomHyperparams::new(bounds.clone(), plan.baseline_seed(i))
            })?,
            Baseline::TrainedAgent => {
                let agent = agent.as_ref().expect("loaded above");
                run_episodes(&mut env, seeds, |_| Greedy(agent))?
            }
        };
        let per_seed = episodes
            .iter()
            .map(|ep| {
                let m = attack_metrics(std::slice::from_ref(ep));
                SeedMetrics {
                    seed: ep.seed,
                    evasion_success_rate: m.evasion_success_rate,
                    mean_posterior_drop: m.mean_posterior_drop,
                    attacked_accuracy: m.attacked_accuracy,
                    max_abs_perturbation: m.max_abs_perturbation,
                }
            })
            .collect();
        runs.push(BaselineRun {
            baseline,
            metrics: attack_metrics(&episodes),
            episodes,
            per_seed,
        });
    }

    let find = |b| runs.iter().find(|r: &&BaselineRun| r.baseline == b);
    let paired = match (find(Baseline::RandomHyperparams), find(Baseline::TrainedAgent)) {
        (Some(r), Some(t)) => Some(PairedComparison {
            trained_wins: r
                .per_seed
                .iter()
                .zip(&t.per_seed)
                .filter(|(r, t)| t.evasion_success_rate > r.evasion_success_rate)
                .count(),
            seeds: seeds.len(),
        }),
        _ => None,
    };
    let summary = EvaluationSummary {
        config_hash: plan.config_hash(),
        seed: plan.seed,
        evaluation_seeds: seeds.clone(),
        baselines: plan.baselines.clone(),
        warnings,
        paired,
    };

    let mut outputs = Outputs::new(out);
    for run in &runs {
        write_baseline(plan, &mut outputs, run)?;
    }
    formats::write_json(&outputs.path(EVALUATION_SUMMARY), &summary)?;
    outputs.finish("evaluate", plan)?;
    Ok((summary, runs))
}

fn write_baseline(plan: &Plan, outputs: &mut Outputs, run: &BaselineRun) -> anyhow::Result<()> {
    let dir = format!("{EVALUATE_DIR}/{}", run.baseline.name());
    let file = MetricsFile {
        metrics: run.metrics.clone(),
        baseline: run.baseline,
        episodes: run.episodes.len(),
        config_hash: plan.config_hash(),
        seed: plan.seed,
    };
    formats::write_json(&outputs.path(format!("{dir}/metrics.json")), &file)?;

    let path = outputs.path(format!("{dir}/per_seed.csv"));
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in &run.per_seed {
        w.serialize(row)?;
    }
    w.flush()?;

    for (i, ep) in run.episodes.iter().enumerate() {
        formats::write_episode_log(&outputs.path(format!("{dir}/episodes/episode_{i:03}.csv")), &ep.frames)?;
    }

    // Plot data follows the first evaluation episode.
    let Some(ep) = run.episodes.first() else {
        return Ok(());
    };
    formats::write_bus_series(&outputs.path(format!("{dir}/clean_voltages.csv")), ep, |f| &f.clean)?;
    formats::write_episode_posterior(&outputs.path(format!("{dir}/clean_posterior.csv")), ep, false)?;
    formats::write_bus_series(&outputs.path(format!("{dir}/perturbation.csv")), ep, |f| &f.perturbation)?;
    formats::write_bus_series(&outputs.path(format!("{dir}/compromised_voltages.csv")), ep, |f| &f.compromised)?;
    formats::write_episode_posterior(&outputs.path(format!("{dir}/attacked_posterior.csv")), ep, true)?;

    let first_attack = ep.frames.iter().filter(|f| f.reward.is_some()).position(|f| f.action.is_some());
    if let Some(step) = first_attack {
        let frame = ep.frames.iter().filter(|f| f.reward.is_some()).nth(step).expect("found");
        let a = frame.action.expect("acted");
        let layout_seed = match plan.attack.field_seed_policy {
            FieldSeedPolicy::Fixed => plan.attack.field_seed,
            FieldSeedPolicy::PerEpisode => derive_seed(ep.seed, stream::FIELD, 0),
            FieldSeedPolicy::PerStep => derive_seed(ep.seed, stream::FIELD, step as u64 + 1),
        };
        let kernel = GaborKernelParams::new(plan.attack.kernel_magnitude, a[0], a[1], a[2])?;
        let field = plan.attack.layout_for(layout_seed)?.field(kernel)?;
        formats::write_field_csv(&outputs.path(format!("{dir}/field.csv")), &field)?;
    }
    Ok(())
}

pub fn required_report_inputs(out: &Path) -> Vec<PathBuf> {
    vec![out.join(DETECTOR_REPORT), out.join(EVALUATION_SUMMARY)]
}

/// Markdown summary of a finished run; fails listing any absent artifact.
pub fn report_stage(out: &Path) -> anyhow::Result<String> {
    let mut missing: Vec<PathBuf> = required_report_inputs(out).into_iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        bail!(missing_message(out, &missing));
    }
    let summary: EvaluationSummary = formats::read_json(&out.join(EVALUATION_SUMMARY))?;
    let metric_paths: Vec<PathBuf> = summary
        .baselines
        .iter()
        .map(|b| out.join(EVALUATE_DIR).join(b.name()).join("metrics.json"))
        .collect();
    missing.extend(metric_paths.iter().filter(|p| !p.exists()).cloned());
    if !missing.is_empty() {
        bail!(missing_message(out, &missing));
    }
    let detector: DetectorRunReport = formats::read_json(&out.join(DETECTOR_REPORT))?;
    let training: Option<TrainingSummary> = out
        .join(TRAINING_SUMMARY)
        .exists()
        .then(|| formats::read_json(&out.join(TRAINING_SUMMARY)))
        .transpose()?;
    let metrics = metric_paths
        .iter()
        .map(|p| formats::read_json::<MetricsFile>(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let text = crate::report::render(&summary, &detector, training.as_ref(), &metrics);
    formats::write_file(&out.join("report.md"), text.as_bytes())?;
    Ok(text)
}

fn missing_message(out: &Path, missing: &[PathBuf]) -> String {
    let list: Vec<String> = missing
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    format!("run directory {} is missing: {}", out.display(), list.join(", "))
}
