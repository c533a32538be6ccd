use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drive_core::data::{generate, ShiftSpec, Split};
use drive_core::models::{net_accuracy, pretrain_source, DenseNet, TrainConfig};

const SEEDS: u64 = 10;

fn spec(seed: u64, rotation: f64, translation: Vec<f64>, noise: f64) -> ShiftSpec {
    ShiftSpec {
        rotation_deg: rotation,
        translation,
        noise_ratio: noise,
        per_class: 150,
        ..ShiftSpec::rotated_gaussians(seed)
    }
}

/// Source-trained model accuracy on (held-out source, target), in percent.
fn source_model_accuracies(s: &ShiftSpec) -> (f64, f64) {
    let (source, target, _) = generate(s).unwrap();
    let (held_out, _, _) = generate(&ShiftSpec { seed: s.seed + 1000, ..s.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let net = DenseNet::new(&[source.dim(), 32, 32, source.num_classes()], &mut rng).unwrap();
    let cfg = TrainConfig { epochs: 15, seed: s.seed, ..TrainConfig::default() };
    let (net, _) = pretrain_source(net, &source, &cfg).unwrap();
    let held_out = held_out.with_split(Split::Target);
    (
        100.0 * net_accuracy(&net, &held_out).unwrap(),
        100.0 * net_accuracy(&net, &target).unwrap(),
    )
}

#[test]
fn null_shift_matches_held_out_source_accuracy() {
    let (mut src, mut tgt) = (0.0, 0.0);
    for seed in 0..SEEDS {
        let (a, b) = source_model_accuracies(&spec(seed, 0.0, vec![0.0, 0.0], 1.0));
        src += a / SEEDS as f64;
        tgt += b / SEEDS as f64;
    }
    assert!((src - tgt).abs() <= 3.0, "held-out {src:.2} vs target {tgt:.2}");
}

#[test]
fn larger_rotation_does_not_help_the_source_model() {
    let mean_target = |rotation: f64| {
        (0..SEEDS)
            .map(|seed| source_model_accuracies(&spec(seed, rotation, vec![0.0, 0.0], 1.0)).1)
            .sum::<f64>()
            / SEEDS as f64
    };
    let accs: Vec<f64> = [0.0, 30.0, 60.0].into_iter().map(mean_target).collect();
    assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
}

#[test]
fn benchmark_split_sizes() {
    let (s, t, b) = generate(&ShiftSpec { per_class: 100, ..ShiftSpec::rotated_gaussians(0) }).unwrap();
    for set in [&s, &t] {
        assert_eq!((set.len(), set.dim()), (500, 8));
    }
    assert!(!b.is_empty());
    assert!(t.labels().is_err(), "target labels must stay hidden");
}
