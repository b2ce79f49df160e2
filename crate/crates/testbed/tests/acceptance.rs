//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs the evasion profile end to end twice (in parallel) and checks the
//! numerical properties against independent references.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gabor_evasion::config::RunConfig;
use gabor_evasion::pipeline::{self, DetectorRunReport, EvaluationSummary, MetricsFile};
use gabor_evasion::Plan;
use gabor_evasion_core::ddpg::{train, DdpgAgent, DdpgConfig, Interval, QuadraticTarget};
use gabor_evasion_core::env::{reward, AttackEnv, RewardParams};
use gabor_evasion_core::eval::{rollout, Greedy, RandomHyperparams};
use gabor_evasion_core::gabor::{build_field, gabor_kernel, Domain, GaborKernelParams};
use gabor_evasion_core::nn::{Activation, Mlp};
use gabor_evasion_core::rng;
use gabor_evasion_core::trace::{generate_trace, TraceScenario};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn timed(limit: Duration, f: impl FnOnce() -> anyhow::Result<(bool, String)>) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e:#}")));
    Outcome {
        pass,
        detail,
        elapsed: start.elapsed(),
        limit,
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[derive(Default, Clone, Copy)]
struct StageTimes {
    simulate: Duration,
    detector: Duration,
    attacker: Duration,
    evaluate: Duration,
}

impl StageTimes {
    fn total(&self) -> Duration {
        self.simulate + self.detector + self.attacker + self.evaluate
    }
}

fn full_pipeline(plan: &Plan, out: &Path) -> anyhow::Result<StageTimes> {
    let mut t = StageTimes::default();
    let s = Instant::now();
    pipeline::simulate(plan, out)?;
    t.simulate = s.elapsed();
    let s = Instant::now();
    pipeline::train_detector_stage(plan, out)?;
    t.detector = s.elapsed();
    let s = Instant::now();
    pipeline::train_attacker_stage(plan, out)?;
    t.attacker = s.elapsed();
    let s = Instant::now();
    pipeline::evaluate_stage(plan, out)?;
    t.evaluate = s.elapsed();
    pipeline::report_stage(out)?;
    Ok(t)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Every file under `dir`, relative and sorted.
fn tree(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort();
    acc
}

fn constraint_bound(plan: &Plan, run: &Path) -> anyhow::Result<(bool, String)> {
    let detector = pipeline::load_detector_checkpoint(run)?;
    let mut components = 0usize;
    let mut worst: f64 = 0.0;
    let mut check = |ep: &gabor_evasion_core::eval::EpisodeRecord| {
        for f in &ep.frames {
            for n in &f.perturbation {
                components += 1;
                worst = worst.max(n.abs());
            }
        }
    };

    // The default attack window (whole trace) as well as the evasion profile's.
    let default_plan = Plan::new(&RunConfig::default())?;
    let mut episodes = 0;
    for p in [&default_plan, plan] {
        let mut env = AttackEnv::new(p.scenario.clone(), &detector, p.attack.clone())?;
        let agent = pipeline::load_agent_checkpoint(plan, run, env.state_dim())?;
        let bounds = p.attack.action_bounds.to_vec();
        for (i, &seed) in p.evaluation_seeds.iter().enumerate() {
            check(&rollout(&mut env, &mut Greedy(&agent), seed)?);
            check(&rollout(&mut env, &mut RandomHyperparams::new(bounds.clone(), p.baseline_seed(i)), seed)?);
            episodes += 2;
        }
    }
    let limit = plan.attack.epsilon;
    Ok((
        worst <= limit,
        format!("{components} components over {episodes} episodes, max |n| {worst:.6} (limit {limit})"),
    ))
}

fn fault_timing() -> anyhow::Result<(bool, String)> {
    let base = TraceScenario::default();
    let mut bad = Vec::new();
    for seed in 0..20 {
        let trace = generate_trace(&base.with_seed(seed))?;
        let onset = trace.times.iter().position(|&t| t >= 5.4);
        let ok = match onset {
            Some(k) => trace.labels.iter().enumerate().all(|(i, &l)| l == u8::from(i >= k)),
            None => false,
        };
        if !ok {
            bad.push(seed);
        }
    }
    Ok((bad.is_empty(), format!("20 default traces, mismatched seeds {bad:?}")))
}

fn clean_detection(run: &Path) -> anyhow::Result<(bool, String)> {
    let r: DetectorRunReport = read_json(&run.join(pipeline::DETECTOR_REPORT))?;
    let n = r.held_out_seeds.len();
    let pass = n >= 10 && r.held_out_frame_accuracy >= 0.95 && r.worst_detection_delay.is_some_and(|d| d <= 0.5);
    Ok((
        pass,
        format!(
            "{n} held-out traces, frame accuracy {:.4}, worst delay {:?} s",
            r.held_out_frame_accuracy, r.worst_detection_delay
        ),
    ))
}

fn attack_effectiveness(run: &Path) -> anyhow::Result<(bool, String)> {
    let trained: MetricsFile = read_json(&run.join("evaluate/trained-agent/metrics.json"))?;
    let random: MetricsFile = read_json(&run.join("evaluate/random-hyperparams/metrics.json"))?;
    let summary: EvaluationSummary = read_json(&run.join(pipeline::EVALUATION_SUMMARY))?;
    let paired = summary.paired.ok_or_else(|| anyhow::anyhow!("no paired comparison"))?;
    let drop = trained.metrics.mean_posterior_drop;
    let pass = drop >= 0.3 && paired.seeds == 10 && paired.trained_wins >= 8;
    Ok((
        pass,
        format!(
            "posterior drop {drop:.4}, evasion {:.3} vs random {:.3}, wins {}/{}",
            trained.metrics.evasion_success_rate,
            random.metrics.evasion_success_rate,
            paired.trained_wins,
            paired.seeds
        ),
    ))
}

fn gabor_oracle() -> anyhow::Result<(bool, String)> {
    let d = Domain::measurement_plane();
    let mut r = rng::seeded(105);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let kernel = GaborKernelParams::new(
            r.random_range(0.5..2.0),
            if seed % 2 == 0 { r.random_range(0.05..2.0) } else { r.random_range(2.0..6.0) },
            r.random_range(0.05..5.0),
            r.random_range(0.0..std::f64::consts::PI),
        )?;
        let field = build_field(kernel, r.random_range(10.0..100.0), d, seed)?;
        for _ in 0..100 {
            let x = r.random_range(d.x_min..d.x_max);
            let y = r.random_range(d.y_min..d.y_max);
            let terms: Vec<f64> = field
                .impulses()
                .iter()
                .map(|i| i.weight * gabor_kernel(&i.params, x - i.x, y - i.y))
                .collect();
            let literal: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            let got = field.evaluate(x, y);
            worst = worst.max((got - literal).abs() / literal.abs().max(1e-12 * scale).max(1e-300));
        }
    }
    Ok((worst <= 1e-9, format!("1000 queries over 10 fields, max relative error {worst:.3e}")))
}

fn reward_oracle() -> anyhow::Result<(bool, String)> {
    let mut r = rng::seeded(106);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k0 = r.random_range(0.0..20.0);
        let params = RewardParams {
            k0,
            ..RewardParams::default()
        };
        let buses = r.random_range(1..=12);
        let c = r.random_range(0.0..1.0);
        let x: Vec<f64> = (0..buses).map(|_| r.random_range(0.7..1.2)).collect();
        let n: Vec<f64> = (0..buses).map(|_| r.random_range(-0.01..0.01)).collect();
        let want = c - x.iter().map(|xi| (k0 * (xi - 1.0)).exp()).sum::<f64>()
            - n.iter().map(|ni| (k0 * ni).exp()).sum::<f64>();
        let got = reward(c, &x, &n, &params)?.value;
        worst = worst.max((got - want).abs() / want.abs().max(1e-300));
    }
    let base = reward(0.0, &[1.0; 9], &[0.0; 9], &RewardParams::default())?.value;
    Ok((
        worst <= 1e-12 && base == -18.0,
        format!("1000 tuples, max relative error {worst:.3e}; nine-bus baseline {base}"),
    ))
}

fn gradient_check() -> anyhow::Result<(bool, String)> {
    const ACTS: [Activation; 4] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    let h = 1e-5;
    let mut r = rng::seeded(107);
    let mut worst: f64 = 0.0;
    let mut seen = [false; 4];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    for k in 0..100 {
        let depth = r.random_range(1..=3);
        let mut sizes = vec![r.random_range(1..=6)];
        let mut acts = Vec::new();
        for d in 0..depth {
            sizes.push(r.random_range(1..=6));
            acts.push(ACTS[(k + d) % 4]);
            seen[(k + d) % 4] = true;
        }
        let net = Mlp::new(&sizes, &acts, k as u64)?;
        let x: Vec<f64> = (0..net.input_dim()).map(|_| r.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(&w).map(|(o, w)| o * w).sum() };
        let bp = net.backward(&x, &w)?;
        let analytic = bp.params.flatten();
        for p in 0..net.param_count() {
            let mut plus = net.clone();
            *plus.params_mut().nth(p).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(p).unwrap() -= h;
            worst = worst.max(rel(analytic[p], (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            worst = worst.max(rel(bp.input[i], (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h)));
        }
    }
    Ok((
        worst < 1e-4 && seen.iter().all(|s| *s),
        format!("100 networks, all activations {}, max relative error {worst:.3e}", seen.iter().all(|s| *s)),
    ))
}

fn toy_ddpg() -> anyhow::Result<(bool, String)> {
    let target = 0.3;
    let len = 10;
    let bounds = vec![Interval::new(-1.0, 1.0)];
    // 5% of the uniform random policy's expected return.
    let tolerance = 0.05 * len as f64 * (1.0 / 3.0 + target * target);
    let mut best = Vec::new();
    for seed in 0..5 {
        let cfg = DdpgConfig {
            seed,
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(1, bounds.clone(), &cfg)?;
        let mut env = QuadraticTarget::new(vec![target], bounds.clone(), len);
        let out = train(&mut agent, &mut env, 200, &cfg, |e| e as u64)?;
        best.push(out.curve.iter().map(|s| s.total_return).fold(f64::NEG_INFINITY, f64::max));
    }
    best.sort_by(f64::total_cmp);
    let median = best[2];
    Ok((
        median.abs() <= tolerance,
        format!("median best return {median:.4} over 5 seeds, tolerance {tolerance:.4}"),
    ))
}

fn determinism(a: &Path, b: &Path) -> anyhow::Result<(bool, String)> {
    let files = tree(a);
    if files != tree(b) {
        return Ok((false, "run directories list different files".into()));
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let traces = files.iter().filter(|f| f.starts_with("traces")).count();
    let metrics = files.iter().filter(|f| f.ends_with("metrics.json")).count();
    Ok((
        differing.is_empty() && traces > 0 && metrics > 0,
        format!(
            "{} files compared ({traces} trace files, {metrics} metrics files), differing {differing:?}",
            files.len()
        ),
    ))
}

fn main() -> ExitCode {
    let cfg = RunConfig::load(&configs_dir().join("evasion.toml")).expect("evasion profile");
    let plan = Plan::new(&cfg).expect("plan");
    let dir = tempfile::tempdir().expect("tempdir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    eprintln!("acceptance: running the evasion pipeline twice");
    let start = Instant::now();
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| full_pipeline(&plan, &a));
        let hb = s.spawn(|| full_pipeline(&plan, &b));
        (ha.join().expect("thread"), hb.join().expect("thread"))
    });
    let wall = start.elapsed();
    let times = match (&ra, &rb) {
        (Ok(t), Ok(_)) => Some(*t),
        _ => None,
    };
    let pipeline_failed = |r: &anyhow::Result<StageTimes>| r.as_ref().err().map(|e| format!("pipeline error: {e:#}"));
    let failure = pipeline_failed(&ra).or_else(|| pipeline_failed(&rb));
    let from_run = |limit: Duration, stage: Option<Duration>, f: &dyn Fn() -> anyhow::Result<(bool, String)>| {
        let mut o = match &failure {
            Some(e) => Outcome {
                pass: false,
                detail: e.clone(),
                elapsed: Duration::ZERO,
                limit,
            },
            None => timed(limit, f),
        };
        o.elapsed += stage.unwrap_or_default();
        o
    };

    let results = vec![
        ("constraint bound", from_run(secs(60), None, &|| constraint_bound(&plan, &a))),
        ("fault timing", timed(secs(10), fault_timing)),
        ("clean detection", from_run(secs(300), times.map(|t| t.detector), &|| clean_detection(&a))),
        ("attack effectiveness", from_run(secs(1800), times.map(|t| t.total()), &|| attack_effectiveness(&a))),
        ("gabor oracle", timed(secs(10), gabor_oracle)),
        ("reward oracle", timed(secs(10), reward_oracle)),
        ("gradient check", timed(secs(60), gradient_check)),
        ("toy ddpg", timed(secs(300), toy_ddpg)),
        ("determinism", from_run(secs(600), Some(wall), &|| determinism(&a, &b))),
    ];

    let mut all = true;
    for (i, (name, o)) in results.iter().enumerate() {
        let in_time = o.elapsed <= o.limit;
        let pass = o.pass && in_time;
        all &= pass;
        println!(
            "[{}] {}. {name}: {} ({:.1} s, limit {} s{})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            o.elapsed.as_secs_f64(),
            o.limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
