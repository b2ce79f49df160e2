use gabor_evasion::formats::{self, NetCheckpoint};
use gabor_evasion_core::ddpg::EpisodeStats;
use gabor_evasion_core::gabor::{build_field, Domain, GaborKernelParams};
use gabor_evasion_core::nn::{Activation, Mlp};
use gabor_evasion_core::rng;
use gabor_evasion_core::trace::{generate_trace, TraceScenario};
use proptest::prelude::*;
use rand::Rng;

fn bits(net: &Mlp) -> Vec<u64> {
    net.params().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        sizes in prop::collection::vec(1usize..8, 2..5),
        seed in any::<u64>(),
        scale in -30i32..30,
    ) {
        let acts: Vec<Activation> = (0..sizes.len() - 1)
            .map(|i| [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity][i % 4])
            .collect();
        let mut net = Mlp::new(&sizes, &acts, seed).unwrap();
        // Spread magnitudes so exponents and subnormal-adjacent values appear.
        let mut r = rng::seeded(seed);
        for p in net.params_mut() {
            *p = r.random_range(-1.0..1.0) * 10f64.powi(scale);
        }
        let text = serde_json::to_string(&NetCheckpoint::from_net(&net)).unwrap();
        let back = serde_json::from_str::<NetCheckpoint>(&text).unwrap().into_net().unwrap();
        prop_assert_eq!(back.layer_sizes(), net.layer_sizes());
        prop_assert_eq!(back.activations(), net.activations());
        prop_assert_eq!(bits(&back), bits(&net));
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = Mlp::new(&[19, 64, 64, 3], &[Activation::Relu, Activation::Relu, Activation::Tanh], 5).unwrap();
    let path = dir.path().join("actor.json");
    formats::save_net(&path, &net).unwrap();
    let back = formats::load_net(&path).unwrap();
    assert_eq!(bits(&back), bits(&net));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["format_version", "layer_sizes", "activations", "weights", "biases"] {
        assert!(doc.get(key).is_some(), "{key}");
    }
}

#[test]
fn checkpoint_rejects_unknown_version_and_bad_shapes() {
    let net = Mlp::new(&[2, 1], &[Activation::Sigmoid], 1).unwrap();
    let mut c = NetCheckpoint::from_net(&net);
    c.format_version = 99;
    assert!(c.into_net().unwrap_err().to_string().contains("format_version"));
    let mut c = NetCheckpoint::from_net(&net);
    c.weights[0].pop();
    assert!(c.into_net().is_err());
    let mut c = NetCheckpoint::from_net(&net);
    c.activations.clear();
    assert!(c.into_net().is_err());
}

#[test]
fn trace_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_trace(&TraceScenario::default().with_seed(3)).unwrap();
    let path = dir.path().join("t.csv");
    formats::write_trace_csv(&path, &trace).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,bus,value,label"));
    assert_eq!(text.lines().count(), 1 + 100 * 9);
    // At least nine significant digits on every value.
    for line in text.lines().skip(1) {
        let value = line.split(',').nth(2).unwrap();
        let mantissa = value.split('e').next().unwrap().replace(['.', '-'], "");
        assert!(mantissa.len() >= 9, "{value}");
    }
    let back = formats::read_trace_csv(&path).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn field_dump_lists_every_impulse() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = GaborKernelParams::new(1.0, 1.0, 2.0, 0.5).unwrap();
    let field = build_field(kernel, 30.0, Domain::measurement_plane(), 4).unwrap();
    let path = dir.path().join("field.csv");
    formats::write_field_csv(&path, &field).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x", "y", "weight", "K", "sigma", "F0", "omega0"]
    );
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), field.impulses().len());
    for (row, imp) in rows.iter().zip(field.impulses()) {
        assert_eq!(row[..3], [imp.x, imp.y, imp.weight]);
        assert_eq!(row[3..], [1.0, 1.0, 2.0, 0.5]);
    }
}

#[test]
fn empty_learning_curve_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    formats::write_learning_curve(&path, &[]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "episode,return,discounted_return,critic_loss\n"
    );
}

#[test]
fn learning_curve_leaves_missing_loss_blank() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let stats = EpisodeStats {
        episode: 0,
        seed: 1,
        total_return: -2.5,
        discounted_return: -1.25,
        critic_loss: None,
        validation_return: None,
        exploration_sigma: 0.2,
        actions: vec![vec![0.1, 0.2, 0.3]],
    };
    formats::write_learning_curve(&path, std::slice::from_ref(&stats)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().nth(1), Some("0,-2.5,-1.25,"));
    let actions = dir.path().join("actions.csv");
    formats::write_actions_csv(&actions, &[stats]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&actions).unwrap(),
        "episode,step,sigma,F0,omega0,exploration_sigma\n0,0,0.1,0.2,0.3,0.2\n"
    );
}
