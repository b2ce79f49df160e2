//! Markdown run summary.

use std::fmt::Write as _;

use crate::pipeline::{DetectorRunReport, EvaluationSummary, MetricsFile, TrainingSummary};

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn delay(v: Option<f64>) -> String {
    v.map_or_else(|| "not detected".to_string(), |d| format!("{d:.2} s"))
}

fn maybe(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), num)
}

pub fn render(
    summary: &EvaluationSummary,
    detector: &DetectorRunReport,
    training: Option<&TrainingSummary>,
    metrics: &[MetricsFile],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evasion attack run\n");
    let _ = writeln!(s, "- config hash: `{}`", summary.config_hash);
    let _ = writeln!(s, "- master seed: {}", summary.seed);
    let _ = writeln!(s, "- evaluation episodes: {}\n", summary.evaluation_seeds.len());

    let _ = writeln!(s, "## Detector\n");
    let _ = writeln!(s, "- final training loss: {}", num(detector.final_loss));
    let _ = writeln!(s, "- test-split window accuracy: {}", num(detector.test_window_accuracy));
    let _ = writeln!(
        s,
        "- held-out frame accuracy: {} over {} traces",
        num(detector.held_out_frame_accuracy),
        detector.held_out_seeds.len()
    );
    let _ = writeln!(s, "- held-out false-positive rate: {}", num(detector.held_out_false_positive_rate));
    let _ = writeln!(s, "- worst detection delay: {}", delay(detector.worst_detection_delay));
    let _ = writeln!(s, "- mean detection delay: {}\n", delay(detector.mean_detection_delay));

    if let Some(t) = training {
        let _ = writeln!(s, "## Attacker training\n");
        let _ = writeln!(s, "- episodes: {}", t.episodes);
        let _ = writeln!(
            s,
            "- kept weights from episode: {}",
            t.best_episode.map_or_else(|| "none".to_string(), |e| e.to_string())
        );
        let _ = writeln!(s, "- mean return, first 10 episodes: {}", maybe(t.first_mean_return));
        let _ = writeln!(s, "- mean return, last 10 episodes: {}", maybe(t.last_mean_return));
        let _ = writeln!(s, "- final exploration sigma: {}", maybe(t.final_exploration_sigma));
        let _ = writeln!(s, "- all actions within bounds: {}\n", t.actions_within_bounds);
    }

    let _ = writeln!(s, "## Attack metrics\n");
    let _ = writeln!(
        s,
        "| baseline | clean_accuracy | attacked_accuracy | evasion_success_rate | mean_posterior_drop | max_abs_perturbation | detection_delay_clean | detection_delay_attacked |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for m in metrics {
        let a = &m.metrics;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.6} | {} | {} |",
            m.baseline.name(),
            num(a.clean_accuracy),
            num(a.attacked_accuracy),
            num(a.evasion_success_rate),
            num(a.mean_posterior_drop),
            a.max_abs_perturbation,
            delay(a.detection_delay_clean),
            delay(a.detection_delay_attacked),
        );
    }
    if let Some(p) = &summary.paired {
        let _ = writeln!(
            s,
            "\nTrained agent beats random hyper-parameters on evasion rate in {} of {} paired seeds.",
            p.trained_wins, p.seeds
        );
    }
    if !summary.warnings.is_empty() {
        let _ = writeln!(s, "\n## Warnings\n");
        for w in &summary.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}
