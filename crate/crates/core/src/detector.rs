//! Sliding-window contingency detector.
//!
//! The attacker side of the crate only sees detectors through
//! [`PosteriorOracle`]: windows of frames go in, a probability comes out.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, AdamConfig, AdamState, Gradients, Mlp};
use crate::rng;
use crate::trace::{LabeledWindow, MeasurementTrace};
use crate::{Error, Result};

/// Voltage that maps to feature 0.
pub const FEATURE_CENTER: f64 = 1.0;
/// Voltage deviation that maps to feature 1.
pub const FEATURE_SCALE: f64 = 0.1;

/// Black-box access to a contingency detector.
pub trait PosteriorOracle {
    /// Frames per query.
    fn window(&self) -> usize;
    fn bus_count(&self) -> usize;
    fn threshold(&self) -> f64;
    /// Posterior probability of contingency for the last `window` frames,
    /// oldest first.
    fn query(&self, frames: &[Vec<f64>]) -> Result<f64>;
}

impl<T: PosteriorOracle + ?Sized> PosteriorOracle for &T {
    fn window(&self) -> usize {
        (**self).window()
    }
    fn bus_count(&self) -> usize {
        (**self).bus_count()
    }
    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
    fn query(&self, frames: &[Vec<f64>]) -> Result<f64> {
        (**self).query(frames)
    }
}

pub fn normalize(v: f64) -> f64 {
    (v - FEATURE_CENTER) / FEATURE_SCALE
}

/// Features for the window ending at frame `t`.
pub fn featurize(trace: &MeasurementTrace, t: usize, window: usize) -> Result<Vec<f64>> {
    if window == 0 || t + 1 < window || t >= trace.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            min: window.saturating_sub(1),
            max: trace.len(),
        });
    }
    Ok(featurize_frames(&trace.frames[t + 1 - window..=t]))
}

/// Normalized, concatenated frames.
pub fn featurize_frames(frames: &[Vec<f64>]) -> Vec<f64> {
    frames.iter().flatten().map(|&v| normalize(v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub hidden: Vec<usize>,
    pub window: usize,
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden: vec![64, 32],
            window: 10,
            threshold: 0.5,
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    net: Mlp,
    window: usize,
    bus_count: usize,
    threshold: f64,
}

impl DetectorModel {
    pub fn new(net: Mlp, window: usize, bus_count: usize, threshold: f64) -> Result<Self> {
        if window == 0 || bus_count == 0 {
            return Err(Error::invalid("window", "window and bus_count must be positive"));
        }
        if net.input_dim() != window * bus_count {
            return Err(Error::dim("detector input", window * bus_count, net.input_dim()));
        }
        if net.output_dim() != 1 {
            return Err(Error::dim("detector output", 1, net.output_dim()));
        }
        if net.activations().last() != Some(&Activation::Sigmoid) {
            return Err(Error::invalid("activations", "detector output must be sigmoid"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid("threshold", "must lie in (0, 1)"));
        }
        Ok(DetectorModel {
            net,
            window,
            bus_count,
            threshold,
        })
    }

    /// Network parameters, for checkpointing by the owner of the model.
    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn posterior(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?[0])
    }
}

impl PosteriorOracle for DetectorModel {
    fn window(&self) -> usize {
        self.window
    }
    fn bus_count(&self) -> usize {
        self.bus_count
    }
    fn threshold(&self) -> f64 {
        self.threshold
    }
    fn query(&self, frames: &[Vec<f64>]) -> Result<f64> {
        if frames.len() != self.window {
            return Err(Error::dim("detector window", self.window, frames.len()));
        }
        if let Some(f) = frames.iter().find(|f| f.len() != self.bus_count) {
            return Err(Error::dim("detector frame", self.bus_count, f.len()));
        }
        self.posterior(&featurize_frames(frames))
    }
}

/// Binary cross-entropy from a logit, stable for large `|z|`.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()))
}

/// Trains a sigmoid MLP with mini-batch Adam on binary cross-entropy.
///
/// Returns the model and the mean loss over the final epoch.
pub fn train_detector(
    train: &[LabeledWindow],
    bus_count: usize,
    config: &DetectorConfig,
) -> Result<(DetectorModel, f64)> {
    if train.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let positives = train.iter().filter(|w| w.label == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::SingleClass);
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let input = config.window * bus_count;
    if let Some(w) = train.iter().find(|w| w.values.len() != input) {
        return Err(Error::dim("training window", input, w.values.len()));
    }

    let mut sizes = vec![input];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mut acts = vec![Activation::Relu; config.hidden.len()];
    acts.push(Activation::Sigmoid);
    let mut net = Mlp::new(&sizes, &acts, rng::derive_seed(config.seed, rng::stream::DETECTOR_INIT, 0))?;
    let mut opt = AdamState::new(&net, AdamConfig::with_learning_rate(config.learning_rate));

    let features: Vec<Vec<f64>> = train
        .iter()
        .map(|w| w.values.iter().map(|&v| normalize(v)).collect())
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::seeded(config.seed);
    let mut last_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&net);
            for &i in batch {
                let trace = net.forward_trace(&features[i])?;
                let z = trace.logits()[0];
                let y = f64::from(train[i].label);
                epoch_loss += bce_from_logit(z, y);
                let g = trace.output()[0] - y;
                grads.add_assign(&net.backward_trace(&trace, &[g], true)?.params);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut net, &grads)?;
        }
        last_loss = epoch_loss / train.len() as f64;
        if !last_loss.is_finite() {
            return Err(Error::NonFinite("detector loss"));
        }
    }
    Ok((DetectorModel::new(net, config.window, bus_count, config.threshold)?, last_loss))
}

/// Fraction of windows classified correctly at the model threshold.
pub fn window_accuracy(model: &DetectorModel, windows: &[LabeledWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for w in windows {
        let f: Vec<f64> = w.values.iter().map(|&v| normalize(v)).collect();
        let p = model.posterior(&f)?;
        if (p >= model.threshold) == (w.label == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPoint {
    pub time: f64,
    pub posterior: f64,
    pub label: u8,
}

/// Detector performance on one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub frame_accuracy: f64,
    pub false_positive_rate: f64,
    /// Seconds from fault onset to the first post-fault frame at or above the
    /// threshold; `None` when never detected.
    pub detection_delay: Option<f64>,
    pub posterior_series: Vec<PosteriorPoint>,
}

/// Scores every full window of `trace` through the oracle.
pub fn evaluate_trace<D: PosteriorOracle>(detector: &D, trace: &MeasurementTrace) -> Result<DetectorReport> {
    let window = detector.window();
    if window == 0 || trace.len() < window {
        return Err(Error::TraceTooShort {
            trace: 0,
            len: trace.len(),
            window,
        });
    }
    let thr = detector.threshold();
    let mut series = Vec::with_capacity(trace.len() + 1 - window);
    for t in window - 1..trace.len() {
        let p = detector.query(&trace.frames[t + 1 - window..=t])?;
        series.push(PosteriorPoint {
            time: trace.times[t],
            posterior: p,
            label: trace.labels[t],
        });
    }
    Ok(summarize(&series, thr, trace.fault_start))
}

/// Accuracy, false-positive rate and delay for a posterior series.
pub fn summarize(series: &[PosteriorPoint], threshold: f64, fault_start: f64) -> DetectorReport {
    let n = series.len().max(1) as f64;
    let correct = series
        .iter()
        .filter(|p| (p.posterior >= threshold) == (p.label == 1))
        .count();
    let negatives = series.iter().filter(|p| p.label == 0).count();
    let false_pos = series
        .iter()
        .filter(|p| p.label == 0 && p.posterior >= threshold)
        .count();
    let detection_delay = series
        .iter()
        .find(|p| p.label == 1 && p.posterior >= threshold)
        .map(|p| (p.time - fault_start).max(0.0));
    DetectorReport {
        frame_accuracy: correct as f64 / n,
        false_positive_rate: if negatives == 0 {
            0.0
        } else {
            false_pos as f64 / negatives as f64
        },
        detection_delay,
        posterior_series: series.to_vec(),
    }
}

/// Pooled performance over several traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub frame_accuracy: f64,
    pub false_positive_rate: f64,
    /// Worst delay over traces; `None` if any trace went undetected.
    pub worst_detection_delay: Option<f64>,
    pub mean_detection_delay: Option<f64>,
    pub per_trace: Vec<DetectorReport>,
}

pub fn evaluate_detector<D: PosteriorOracle>(
    detector: &D,
    traces: &[MeasurementTrace],
) -> Result<DetectorSummary> {
    let per_trace = traces
        .iter()
        .map(|t| evaluate_trace(detector, t))
        .collect::<Result<Vec<_>>>()?;
    let frames: usize = per_trace.iter().map(|r| r.posterior_series.len()).sum();
    let correct: f64 = per_trace
        .iter()
        .map(|r| r.frame_accuracy * r.posterior_series.len() as f64)
        .sum();
    let thr = detector.threshold();
    let negatives = per_trace
        .iter()
        .flat_map(|r| &r.posterior_series)
        .filter(|p| p.label == 0)
        .count();
    let false_pos = per_trace
        .iter()
        .flat_map(|r| &r.posterior_series)
        .filter(|p| p.label == 0 && p.posterior >= thr)
        .count();
    let delays: Option<Vec<f64>> = per_trace.iter().map(|r| r.detection_delay).collect();
    let (worst, mean) = match delays {
        Some(d) if !d.is_empty() => (
            Some(d.iter().copied().fold(0.0, f64::max)),
            Some(d.iter().sum::<f64>() / d.len() as f64),
        ),
        _ => (None, None),
    };
    Ok(DetectorSummary {
        frame_accuracy: if frames == 0 { 0.0 } else { correct / frames as f64 },
        false_positive_rate: if negatives == 0 {
            0.0
        } else {
            false_pos as f64 / negatives as f64
        },
        worst_detection_delay: worst,
        mean_detection_delay: mean,
        per_trace,
    })
}
