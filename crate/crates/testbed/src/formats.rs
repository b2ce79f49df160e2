//! On-disk formats: network checkpoints, metadata and CSV exports.

use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::Path;

use anyhow::{bail, ensure, Context};
use gabor_evasion_core::ddpg::{AgentSnapshot, EpisodeStats, Interval};
use gabor_evasion_core::detector::{DetectorModel, PosteriorPoint, FEATURE_CENTER, FEATURE_SCALE};
use gabor_evasion_core::eval::{EpisodeRecord, FrameRecord};
use gabor_evasion_core::gabor::GaborField;
use gabor_evasion_core::nn::{Activation, Layer, Mlp};
use gabor_evasion_core::trace::MeasurementTrace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Portable form of an [`Mlp`]. Weights are row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl NetCheckpoint {
    pub fn from_net(net: &Mlp) -> Self {
        NetCheckpoint {
            format_version: CHECKPOINT_VERSION,
            layer_sizes: net.layer_sizes(),
            activations: net.activations(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.biases.clone()).collect(),
        }
    }

    pub fn into_net(self) -> anyhow::Result<Mlp> {
        ensure!(
            self.format_version == CHECKPOINT_VERSION,
            "unsupported checkpoint format_version {} (expected {CHECKPOINT_VERSION})",
            self.format_version
        );
        let layers = self.layer_sizes.len().saturating_sub(1);
        ensure!(
            layers > 0
                && self.activations.len() == layers
                && self.weights.len() == layers
                && self.biases.len() == layers,
            "checkpoint lists {} sizes, {} activations, {} weight and {} bias arrays",
            self.layer_sizes.len(),
            self.activations.len(),
            self.weights.len(),
            self.biases.len()
        );
        let layers = (0..layers)
            .map(|i| Layer {
                inputs: self.layer_sizes[i],
                outputs: self.layer_sizes[i + 1],
                weights: self.weights[i].clone(),
                biases: self.biases[i].clone(),
                activation: self.activations[i],
            })
            .collect();
        Ok(Mlp::from_layers(layers)?)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn save_net(path: &Path, net: &Mlp) -> anyhow::Result<()> {
    write_json(path, &NetCheckpoint::from_net(net))
}

pub fn load_net(path: &Path) -> anyhow::Result<Mlp> {
    read_json::<NetCheckpoint>(path)?
        .into_net()
        .with_context(|| format!("invalid checkpoint {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetadata {
    pub window: usize,
    pub bus_count: usize,
    pub threshold: f64,
    /// Features are `(v - feature_center) / feature_scale`.
    pub feature_center: f64,
    pub feature_scale: f64,
}

pub const DETECTOR_NET: &str = "network.json";
pub const DETECTOR_META: &str = "metadata.json";

pub fn save_detector(dir: &Path, model: &DetectorModel) -> anyhow::Result<()> {
    use gabor_evasion_core::detector::PosteriorOracle;
    save_net(&dir.join(DETECTOR_NET), model.net())?;
    write_json(
        &dir.join(DETECTOR_META),
        &DetectorMetadata {
            window: model.window(),
            bus_count: model.bus_count(),
            threshold: model.threshold(),
            feature_center: FEATURE_CENTER,
            feature_scale: FEATURE_SCALE,
        },
    )
}

pub fn load_detector(dir: &Path) -> anyhow::Result<DetectorModel> {
    let meta: DetectorMetadata = read_json(&dir.join(DETECTOR_META))?;
    ensure!(
        meta.feature_center == FEATURE_CENTER && meta.feature_scale == FEATURE_SCALE,
        "detector was trained with normalization ({}, {}), this build uses ({FEATURE_CENTER}, {FEATURE_SCALE})",
        meta.feature_center,
        meta.feature_scale
    );
    let net = load_net(&dir.join(DETECTOR_NET))?;
    Ok(DetectorModel::new(net, meta.window, meta.bus_count, meta.threshold)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetadata {
    pub state_dim: usize,
    pub bounds: Vec<Interval>,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    pub episodes: usize,
    /// Episode whose weights were kept; `None` for an untrained agent.
    pub best_episode: Option<usize>,
}

pub const AGENT_ACTOR: &str = "actor.json";
pub const AGENT_CRITIC: &str = "critic.json";
pub const AGENT_META: &str = "metadata.json";

pub fn save_agent(dir: &Path, snapshot: &AgentSnapshot, meta: &AgentMetadata) -> anyhow::Result<()> {
    save_net(&dir.join(AGENT_ACTOR), &snapshot.actor)?;
    save_net(&dir.join(AGENT_CRITIC), &snapshot.critic)?;
    write_json(&dir.join(AGENT_META), meta)
}

pub fn load_agent(dir: &Path) -> anyhow::Result<(AgentSnapshot, AgentMetadata)> {
    let meta = read_json(&dir.join(AGENT_META))?;
    let snapshot = AgentSnapshot {
        actor: load_net(&dir.join(AGENT_ACTOR))?,
        critic: load_net(&dir.join(AGENT_CRITIC))?,
    };
    Ok((snapshot, meta))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `time,bus,value,label`, one row per bus per frame.
pub fn write_trace_csv(path: &Path, trace: &MeasurementTrace) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "bus", "value", "label"])?;
    for ((t, frame), label) in trace.times.iter().zip(&trace.frames).zip(&trace.labels) {
        for (bus, v) in frame.iter().enumerate() {
            w.write_record([t.to_string(), bus.to_string(), format!("{v:.16e}"), label.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time: f64,
    bus: usize,
    value: f64,
    label: u8,
}

/// Reads a trace CSV; `fault_start` is taken as the first labeled time.
pub fn read_trace_csv(path: &Path) -> anyhow::Result<MeasurementTrace> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut trace = MeasurementTrace {
        times: Vec::new(),
        frames: Vec::new(),
        labels: Vec::new(),
        fault_start: f64::INFINITY,
    };
    for (i, row) in r.deserialize::<TraceRow>().enumerate() {
        let row = row.with_context(|| format!("{}: bad row {}", path.display(), i + 2))?;
        if row.bus == 0 {
            trace.times.push(row.time);
            trace.labels.push(row.label);
            trace.frames.push(Vec::new());
        }
        let Some(frame) = trace.frames.last_mut() else {
            bail!("{}: first row must be bus 0", path.display());
        };
        ensure!(
            row.bus == frame.len() && *trace.times.last().unwrap() == row.time,
            "{}: row {} out of order",
            path.display(),
            i + 2
        );
        frame.push(row.value);
    }
    if let Some(k) = trace.onset_index() {
        trace.fault_start = trace.times[k];
    }
    Ok(trace)
}

/// `x,y,weight,K,sigma,F0,omega0`, one row per impulse.
pub fn write_field_csv(path: &Path, field: &GaborField) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "weight", "K", "sigma", "F0", "omega0"])?;
    for i in field.impulses() {
        let p = &i.params;
        w.write_record(
            [i.x, i.y, i.weight, p.magnitude, p.sigma, p.frequency, p.orientation].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `time,posterior,label`.
pub fn write_posterior_csv(path: &Path, series: &[PosteriorPoint]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "posterior", "label"])?;
    for p in series {
        w.write_record([p.time.to_string(), p.posterior.to_string(), p.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `frame,time,reward,c,clean_posterior,attacked_posterior,max_abs_n`.
///
/// `reward` is empty for frames scored before the attack began.
pub fn write_episode_log(path: &Path, frames: &[FrameRecord]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["frame", "time", "reward", "c", "clean_posterior", "attacked_posterior", "max_abs_n"])?;
    for f in frames {
        w.write_record([
            f.frame.to_string(),
            f.time.to_string(),
            opt(f.reward),
            f.c.to_string(),
            f.clean_posterior.to_string(),
            f.attacked_posterior.to_string(),
            f.max_abs_perturbation().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `episode,return,discounted_return,critic_loss`; the loss is empty before
/// the first update.
pub fn write_learning_curve(path: &Path, curve: &[EpisodeStats]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["episode", "return", "discounted_return", "critic_loss"])?;
    for s in curve {
        w.write_record([
            s.episode.to_string(),
            s.total_return.to_string(),
            s.discounted_return.to_string(),
            opt(s.critic_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `episode,step,sigma,F0,omega0,exploration_sigma` for every training action.
pub fn write_actions_csv(path: &Path, curve: &[EpisodeStats]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["episode", "step", "sigma", "F0", "omega0", "exploration_sigma"])?;
    for s in curve {
        for (k, a) in s.actions.iter().enumerate() {
            let mut row = vec![s.episode.to_string(), k.to_string()];
            row.extend(a.iter().map(f64::to_string));
            row.push(s.exploration_sigma.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-bus series of one episode as `time,bus,value`.
pub fn write_bus_series(
    path: &Path,
    episode: &EpisodeRecord,
    pick: impl Fn(&FrameRecord) -> &[f64],
) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["time", "bus", "value"])?;
    for f in &episode.frames {
        for (bus, v) in pick(f).iter().enumerate() {
            w.write_record([f.time.to_string(), bus.to_string(), format!("{v:.16e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_posterior(path: &Path, episode: &EpisodeRecord, attacked: bool) -> anyhow::Result<()> {
    let series: Vec<PosteriorPoint> = episode
        .frames
        .iter()
        .map(|f| PosteriorPoint {
            time: f.time,
            posterior: if attacked { f.attacked_posterior } else { f.clean_posterior },
            label: f.label,
        })
        .collect();
    write_posterior_csv(path, &series)
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 14];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
