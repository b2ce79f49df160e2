//! Labeled voltage-measurement traces for a small transmission system.
//!
//! Frames follow a damped voltage-sag model rather than a full electromechanical
//! simulation: after the fault each bus drops by
//! `coupling[i] * depth * exp(-damping * tau) * |cos(2 pi freq tau)|`, on top of
//! Gaussian sensor noise.

use alloc::format;
use alloc::vec::Vec;

use libm::{cos, exp, fabs};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Nominal bus voltages (pu) of the shipped 9-bus case, from its base power flow.
pub const IEEE9_NOMINAL: [f64; 9] = [
    1.040, 1.025, 1.025, 1.0258, 0.9956, 1.0127, 1.0258, 1.0159, 1.0324,
];

/// Per-bus sag coupling of the shipped case, peaked at bus index 4.
pub const IEEE9_COUPLING: [f64; 9] = [0.30, 0.30, 0.15, 0.60, 1.00, 0.35, 0.60, 0.35, 0.20];

/// Zero-based index of the faulted bus in the shipped case.
pub const IEEE9_FAULT_BUS: usize = 4;

/// Static description of the monitored buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBusCase", into = "RawBusCase")]
pub struct BusCase {
    nominal_voltage: Vec<f64>,
    fault_coupling: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBusCase {
    bus_count: usize,
    nominal_voltage: Vec<f64>,
    fault_coupling: Vec<f64>,
}

impl TryFrom<RawBusCase> for BusCase {
    type Error = Error;

    fn try_from(raw: RawBusCase) -> Result<Self> {
        BusCase::new(raw.bus_count, raw.nominal_voltage, raw.fault_coupling)
    }
}

impl From<BusCase> for RawBusCase {
    fn from(case: BusCase) -> Self {
        RawBusCase {
            bus_count: case.bus_count(),
            nominal_voltage: case.nominal_voltage,
            fault_coupling: case.fault_coupling,
        }
    }
}

impl BusCase {
    pub fn new(bus_count: usize, nominal_voltage: Vec<f64>, fault_coupling: Vec<f64>) -> Result<Self> {
        if bus_count == 0 {
            return Err(Error::invalid("bus_count", "must be positive"));
        }
        if nominal_voltage.len() != bus_count {
            return Err(Error::invalid(
                "nominal_voltage",
                format!("has {} entries, bus_count is {bus_count}", nominal_voltage.len()),
            ));
        }
        if fault_coupling.len() != bus_count {
            return Err(Error::invalid(
                "fault_coupling",
                format!("has {} entries, bus_count is {bus_count}", fault_coupling.len()),
            ));
        }
        if let Some((i, v)) = nominal_voltage
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.9..=1.1).contains(*v))
        {
            return Err(Error::invalid(
                "nominal_voltage",
                format!("bus {i} has {v} pu, outside [0.9, 1.1]"),
            ));
        }
        if let Some((i, c)) = fault_coupling
            .iter()
            .enumerate()
            .find(|(_, c)| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::invalid(
                "fault_coupling",
                format!("bus {i} has {c}, outside [0, 1]"),
            ));
        }
        Ok(BusCase {
            nominal_voltage,
            fault_coupling,
        })
    }

    /// The shipped 9-bus case.
    pub fn ieee9() -> Self {
        BusCase {
            nominal_voltage: IEEE9_NOMINAL.to_vec(),
            fault_coupling: IEEE9_COUPLING.to_vec(),
        }
    }

    pub fn bus_count(&self) -> usize {
        self.nominal_voltage.len()
    }

    pub fn nominal_voltage(&self) -> &[f64] {
        &self.nominal_voltage
    }

    pub fn fault_coupling(&self) -> &[f64] {
        &self.fault_coupling
    }
}

/// Parameters of one simulated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScenario {
    pub case: BusCase,
    /// Sampling interval (s).
    pub dt: f64,
    /// Total duration (s).
    pub horizon: f64,
    /// Fault onset (s).
    pub fault_start: f64,
    pub fault_bus: usize,
    /// Peak voltage sag (pu).
    pub fault_depth: f64,
    /// Oscillation frequency of the sag (Hz).
    pub fault_freq: f64,
    /// Exponential decay rate of the sag (1/s).
    pub fault_damping: f64,
    /// Standard deviation of additive sensor noise (pu).
    pub sensor_noise_std: f64,
    pub seed: u64,
}

impl Default for TraceScenario {
    fn default() -> Self {
        TraceScenario {
            case: BusCase::ieee9(),
            dt: 0.1,
            horizon: 10.0,
            fault_start: 5.4,
            fault_bus: IEEE9_FAULT_BUS,
            fault_depth: 0.2,
            fault_freq: 1.5,
            fault_damping: 1.0,
            sensor_noise_std: 0.002,
            seed: 0,
        }
    }
}

impl TraceScenario {
    pub fn with_seed(&self, seed: u64) -> Self {
        TraceScenario {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("{} must be positive", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > self.dt) {
            return Err(Error::invalid(
                "horizon",
                format!("{} must exceed dt = {}", self.horizon, self.dt),
            ));
        }
        if !(self.fault_start >= 0.0 && self.fault_start < self.horizon) {
            return Err(Error::invalid(
                "fault_start",
                format!("{} must lie in [0, {})", self.fault_start, self.horizon),
            ));
        }
        if self.fault_bus >= self.case.bus_count() {
            return Err(Error::invalid(
                "fault_bus",
                format!(
                    "{} out of range for {} buses",
                    self.fault_bus,
                    self.case.bus_count()
                ),
            ));
        }
        if !(self.fault_depth >= 0.0 && self.fault_depth.is_finite()) {
            return Err(Error::invalid("fault_depth", "must be finite and non-negative"));
        }
        if !(self.fault_freq >= 0.0 && self.fault_freq.is_finite()) {
            return Err(Error::invalid("fault_freq", "must be finite and non-negative"));
        }
        if !(self.fault_damping >= 0.0 && self.fault_damping.is_finite()) {
            return Err(Error::invalid("fault_damping", "must be finite and non-negative"));
        }
        if !(self.sensor_noise_std >= 0.0 && self.sensor_noise_std.is_finite()) {
            return Err(Error::invalid(
                "sensor_noise_std",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Number of frames `k` with `k * dt < horizon` (up to rounding of the ratio).
    pub fn frame_count(&self) -> usize {
        let ratio = self.horizon / self.dt;
        let rounded = libm::round(ratio);
        if fabs(ratio - rounded) < 1e-9 {
            rounded as usize
        } else {
            libm::ceil(ratio) as usize
        }
    }

    /// Sag magnitude at `tau` seconds after onset, before bus coupling.
    pub fn transient(&self, tau: f64) -> f64 {
        self.fault_depth
            * exp(-self.fault_damping * tau)
            * fabs(cos(2.0 * core::f64::consts::PI * self.fault_freq * tau))
    }
}

/// Time-indexed per-bus voltages with contingency labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTrace {
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub fault_start: f64,
}

impl MeasurementTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bus_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Index of the first frame labeled as contingency, if any.
    pub fn onset_index(&self) -> Option<usize> {
        self.labels.iter().position(|&l| l == 1)
    }
}

/// Simulates one trace; bit-identical for identical scenarios.
pub fn generate_trace(scenario: &TraceScenario) -> Result<MeasurementTrace> {
    scenario.validate()?;
    let count = scenario.frame_count();
    let buses = scenario.case.bus_count();
    let nominal = scenario.case.nominal_voltage();
    let coupling = scenario.case.fault_coupling();

    let mut rng = rng::seeded(scenario.seed);
    let noise = if scenario.sensor_noise_std > 0.0 {
        Some(
            Normal::new(0.0, scenario.sensor_noise_std)
                .map_err(|_| Error::invalid("sensor_noise_std", "rejected by normal sampler"))?,
        )
    } else {
        None
    };

    let mut times = Vec::with_capacity(count);
    let mut frames = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * scenario.dt;
        let faulted = t >= scenario.fault_start;
        let sag = if faulted {
            scenario.transient(t - scenario.fault_start)
        } else {
            0.0
        };
        let frame = (0..buses)
            .map(|i| {
                let mut v = nominal[i] - coupling[i] * sag;
                if let Some(noise) = &noise {
                    v += noise.sample(&mut rng);
                }
                v
            })
            .collect();
        times.push(t);
        frames.push(frame);
        labels.push(u8::from(faulted));
    }
    Ok(MeasurementTrace {
        times,
        frames,
        labels,
        fault_start: scenario.fault_start,
    })
}

/// A sliding window of raw frames labeled by its final frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    /// Index of the source trace in the input list.
    pub trace: usize,
    /// Index of the final frame inside the source trace.
    pub end: usize,
    /// Row-major `window x bus_count` voltages.
    pub values: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub train_traces: Vec<usize>,
    pub test_traces: Vec<usize>,
}

/// All windows of `trace` in frame order.
pub fn windows(trace: &MeasurementTrace, trace_index: usize, window: usize) -> Vec<LabeledWindow> {
    if window == 0 || trace.len() < window {
        return Vec::new();
    }
    (window - 1..trace.len())
        .map(|end| LabeledWindow {
            trace: trace_index,
            end,
            values: trace.frames[end + 1 - window..=end]
                .iter()
                .flatten()
                .copied()
                .collect(),
            label: trace.labels[end],
        })
        .collect()
}

/// Splits whole traces into train/test groups and cuts each into windows.
pub fn split_dataset(
    traces: &[MeasurementTrace],
    window: usize,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if window == 0 {
        return Err(Error::invalid("window", "must be positive"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("ratio", format!("{ratio} must lie in (0, 1)")));
    }
    if traces.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: traces.len(),
        });
    }
    if let Some((i, t)) = traces.iter().enumerate().find(|(_, t)| t.len() <= window) {
        return Err(Error::TraceTooShort {
            trace: i,
            len: t.len(),
            window,
        });
    }

    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let n_train = (libm::round(ratio * traces.len() as f64) as usize).clamp(1, traces.len() - 1);
    let mut train_traces = order[..n_train].to_vec();
    let mut test_traces = order[n_train..].to_vec();
    train_traces.sort_unstable();
    test_traces.sort_unstable();

    let collect = |ids: &[usize]| -> Vec<LabeledWindow> {
        ids.iter()
            .flat_map(|&i| windows(&traces[i], i, window))
            .collect()
    };
    Ok(DatasetSplit {
        train: collect(&train_traces),
        test: collect(&test_traces),
        train_traces,
        test_traces,
    })
}
