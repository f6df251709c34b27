use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sixthsense_core::history::ScanWindow;
use sixthsense_core::lidar::BINS;
use sixthsense_core::model::{forward, forward_cached, init_params, ModelConfig, ModelParams};
use sixthsense_core::supervision::{make_labels, CameraConfig, LabelTensor, ObservationSource, PersonObservation};
use sixthsense_core::training::{backward_raw, masked_loss_with, train_step, AdamState, TrainConfig, TrainingExample};
use sixthsense_core::Pose2D;

fn random_window(n: usize, seed: u64) -> ScanWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScanWindow {
        n,
        channels: (0..n * BINS).map(|_| rng.random_range(0.05..10.0)).collect(),
        timestamp: 0.0,
        robot_pose: Pose2D::IDENTITY,
    }
}

fn small_config() -> ModelConfig {
    ModelConfig { in_channels: 3, hidden_channels: 4, kernel_sizes: vec![3, 5], dilations: vec![1, 2], ..ModelConfig::new(3) }
}

fn small_labels(len: usize) -> LabelTensor {
    let mut l = LabelTensor::empty(len);
    // masked wedge over rays 2..=11, two positives, one of them near the far end
    for i in 2..=11 {
        l.mask[i] = 1.0;
    }
    for (i, d, o) in [(4, 2.5, 0.7), (10, 7.1, -2.2)] {
        l.presence[i] = 1.0;
        l.distance[i] = d;
        l.bearing_sin[i] = libm::sin(o);
        l.bearing_cos[i] = libm::cos(o);
    }
    l
}

fn total_loss(p: &ModelParams, input: &[f64], labels: &LabelTensor) -> f64 {
    let cache = forward_cached(p, input, labels.len()).unwrap();
    masked_loss_with(cache.prediction(), labels, p.config.d_max - p.config.d_min).total
}

#[test]
fn gradients_match_central_differences() {
    let len = 16;
    let cfg = small_config();
    let mut p = init_params(&cfg, 21).unwrap();
    // non-trivial gains, shifts and biases so every term is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for v in p.data.iter_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    let input: Vec<f64> = (0..cfg.in_channels * len).map(|_| rng.random_range(0.05..10.0)).collect();
    let labels = small_labels(len);
    let (_, analytic) = backward_raw(&p, &input, &labels).unwrap();

    let eps = 1e-6;
    let mut groups: Vec<(String, (usize, usize))> = Vec::new();
    for (l, s) in p.layout.layers.iter().enumerate() {
        for (name, r) in [("weight", s.weight), ("bias", s.bias), ("gain", s.gain), ("shift", s.shift)] {
            groups.push((format!("layer{l}.{name}"), r));
        }
    }
    groups.push(("head.weight".into(), p.layout.head_weight));
    groups.push(("head.bias".into(), p.layout.head_bias));

    for (name, (a, b)) in groups {
        let mut worst: f64 = 0.0;
        for i in a..b {
            let orig = p.data[i];
            p.data[i] = orig + eps;
            let up = total_loss(&p, &input, &labels);
            p.data[i] = orig - eps;
            let down = total_loss(&p, &input, &labels);
            p.data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
        assert!(worst < 1e-5, "{name}: relative error {worst:e}");
    }
}

#[test]
fn forward_commutes_with_ring_rotation() {
    let p = init_params(&ModelConfig::new(30), 5).unwrap();
    for seed in 0..20 {
        let w = random_window(30, 100 + seed);
        let base = forward(&p, &w).unwrap();
        for k in [1, 37, 180, 359] {
            let rotated = forward(&p, &w.rotated(k)).unwrap();
            let diff = rotated.max_abs_diff(&base.rotated(k));
            assert!(diff <= 1e-9, "seed {seed} k {k}: {diff:e}");
        }
    }
}

#[test]
fn perturbing_one_bin_stays_within_21_rays() {
    let cfg = ModelConfig::new(2);
    assert_eq!(cfg.receptive_field(), 43);
    let p = init_params(&cfg, 6).unwrap();
    let w = random_window(2, 7);
    let base = forward(&p, &w).unwrap();
    let mut widest = 0;
    for (src, channel) in [(0usize, 0usize), (100, 1), (359, 0)] {
        let mut moved = w.clone();
        moved.channels[channel * BINS + src] += 1.5;
        let out = forward(&p, &moved).unwrap();
        for i in 0..BINS {
            let changed = [
                (base.presence[i], out.presence[i]),
                (base.distance[i], out.distance[i]),
                (base.bearing_sin[i], out.bearing_sin[i]),
                (base.bearing_cos[i], out.bearing_cos[i]),
            ]
            .iter()
            .any(|(a, b)| a != b);
            let dist = {
                let d = src.abs_diff(i);
                d.min(BINS - d)
            };
            if changed {
                assert!(dist <= 21, "bin {src} moved output {i}");
                widest = widest.max(dist);
            }
        }
    }
    assert_eq!(widest, 21);
}

#[test]
fn one_sample_is_memorized_in_200_steps() {
    let people = [
        PersonObservation { pose: Pose2D::new(2.5, 0.4, 2.0), source: ObservationSource::CameraDetector },
        PersonObservation { pose: Pose2D::new(4.0, -1.5, -0.5), source: ObservationSource::CameraDetector },
    ];
    let labels = make_labels(&people, &CameraConfig::default());
    let ex = TrainingExample { window: random_window(30, 8), labels };
    let tc = TrainConfig { noise_sigma: 0.0, mirror_prob: 0.0, ..TrainConfig::default() };
    let mut p = init_params(&ModelConfig::new(30), 9).unwrap();
    let mut adam = AdamState::new(p.data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut losses = Vec::new();
    for _ in 0..200 {
        losses.push(train_step(&mut p, &mut adam, &[&ex], &tc, &mut rng).unwrap().total);
    }
    let initial = losses[0];
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 0.1 * initial, "initial {initial}, best {best}");
    // decreasing on average: every quarter beats the one before
    let quarter = |q: usize| losses[q * 50..(q + 1) * 50].iter().sum::<f64>();
    for q in 1..4 {
        assert!(quarter(q) < quarter(q - 1));
    }
}
