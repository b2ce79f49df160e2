//! Files, configuration and the command-line pipeline around
//! `gabor-evasion-core`.
//!
//! A run directory collects everything one config produces:
//!
//! ```text
//! traces/            simulate
//! detector/          train-detector (checkpoint, report.json, posterior.csv)
//! agent/             train-attacker (checkpoint, learning_curve.csv, actions.csv)
//! evaluate/<name>/   evaluate, one directory per baseline
//! report.md          report
//! *.manifest.json    per-stage file hashes, config hash and master seed
//! ```

pub mod case;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{Plan, RunConfig};

/// Loads `config` (or the defaults), applies the command-line overrides and
/// resolves the plan. Returns the plan and the run directory.
pub fn resolve(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<(Plan, PathBuf)> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = out {
        cfg.run.out = out;
    }
    let plan = Plan::new(&cfg)?;
    Ok((plan, cfg.run.out))
}
