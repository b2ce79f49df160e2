use gabor_evasion_core::ddpg::{train, DdpgAgent, DdpgConfig, Interval, QuadraticTarget};

/// Expected return of a uniform random policy on `[-1, 1]` for target `t`:
/// `len * (1/3 + t^2)`.
fn random_policy_return(target: f64, len: usize) -> f64 {
    -(len as f64) * (1.0 / 3.0 + target * target)
}

#[test]
fn quadratic_target_reaches_optimum() {
    let target = 0.3;
    let len = 10;
    let bounds = vec![Interval::new(-1.0, 1.0)];
    let tolerance = 0.05 * random_policy_return(target, len).abs();
    let mut best = Vec::new();
    for seed in 0..5 {
        let cfg = DdpgConfig {
            seed,
            ..DdpgConfig::default()
        };
        let mut agent = DdpgAgent::new(1, bounds.clone(), &cfg).unwrap();
        let mut env = QuadraticTarget::new(vec![target], bounds.clone(), len);
        let out = train(&mut agent, &mut env, 200, &cfg, |e| e as u64).unwrap();
        let top = out
            .curve
            .iter()
            .map(|s| s.total_return)
            .fold(f64::NEG_INFINITY, f64::max);
        best.push(top);
    }
    best.sort_by(f64::total_cmp);
    let median = best[2];
    assert!(median.abs() <= tolerance, "median best return {median}, tolerance {tolerance}");
}
