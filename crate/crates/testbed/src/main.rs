use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gabor_evasion::pipeline;

#[derive(Parser)]
#[command(version, about = "Gabor-noise evasion attack testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory, overriding `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the detector's trace pool as CSV.
    Simulate,
    /// Train the detector and write its checkpoint and report.
    TrainDetector,
    /// Train the DDPG attacker against the stored detector.
    TrainAttacker,
    /// Run the baselines on held-out seeds and write metrics and plot data.
    Evaluate,
    /// Summarize a finished run directory as markdown.
    Report,
    /// Every stage in order.
    All,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Report = cli.command {
        let out = match (cli.out, &cli.config) {
            (Some(out), _) => out,
            (None, _) => gabor_evasion::resolve(cli.config.as_deref(), cli.seed, None)?.1,
        };
        print!("{}", pipeline::report_stage(&out)?);
        return Ok(());
    }
    let (plan, out) = gabor_evasion::resolve(cli.config.as_deref(), cli.seed, cli.out)?;
    let all = matches!(cli.command, Command::All);
    if all || matches!(cli.command, Command::Simulate) {
        let m = pipeline::simulate(&plan, &out)?;
        eprintln!("simulate: wrote {} files to {}", m.files.len(), out.display());
    }
    if all || matches!(cli.command, Command::TrainDetector) {
        let r = pipeline::train_detector_stage(&plan, &out)?;
        eprintln!(
            "train-detector: held-out accuracy {:.4}, worst delay {:?}",
            r.held_out_frame_accuracy, r.worst_detection_delay
        );
    }
    if all || matches!(cli.command, Command::TrainAttacker) {
        let s = pipeline::train_attacker_stage(&plan, &out)?;
        eprintln!(
            "train-attacker: {} episodes, kept episode {:?}",
            s.episodes, s.best_episode
        );
    }
    if all || matches!(cli.command, Command::Evaluate) {
        let (summary, runs) = pipeline::evaluate_stage(&plan, &out)?;
        for r in &runs {
            eprintln!(
                "evaluate {}: evasion {:.3}, posterior drop {:.3}, max |n| {:.4}",
                r.baseline.name(),
                r.metrics.evasion_success_rate,
                r.metrics.mean_posterior_drop,
                r.metrics.max_abs_perturbation
            );
        }
        if let Some(p) = summary.paired {
            eprintln!("evaluate: trained agent wins {} of {} seeds", p.trained_wins, p.seeds);
        }
    }
    if all {
        pipeline::report_stage(&out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
