mod common;

use proptest::prelude::*;
use rand::Rng;
use sdc::dataio::{generate_triplets, SceneConfig};
use sdc::diffgraph::checkpoint::Checkpoint;
use sdc::diffgraph::{Array, Graph};
use sdc::geometry::Pose;
use sdc::losses::{total_loss, LossWeights, ObjectiveInputs, ObjectiveOptions};
use sdc::models::arch::{self, ALL_TABLES, DECODER, KNOWN_ANOMALIES, POSE_NETWORK, VGG11_ENCODER, VGG8_ENCODER};
use sdc::models::infer::{depth_input, model_checkpoint};
use sdc::models::network::{MAX_DEPTH, MIN_DEPTH};
use sdc::models::{
    infer, train, Adam, DepthNetwork, EncoderVariant, LrSchedule, ModelConfig, ModelError, PoseNetwork,
    PoseParameterization, Predictor, TrainConfig, TrainingSet,
};

fn synthetic_set(n: usize, seed: u64) -> (TrainingSet, Vec<sdc::dataio::SyntheticTriplet>) {
    let triplets = generate_triplets(&SceneConfig::default(), n, seed, 2).unwrap();
    let items: Vec<_> = triplets.iter().map(|t| (t.triplet.clone(), Some(t.pose_prev), Some(t.pose_next))).collect();
    (TrainingSet::from_triplets(&items, 2).unwrap(), triplets)
}

fn vgg8_config() -> ModelConfig {
    ModelConfig::new(EncoderVariant::Vgg8, PoseParameterization::Exponential, 64, 64)
}

fn zero_checkpoint(cfg: &ModelConfig) -> Checkpoint {
    let arrays = DepthNetwork::parameter_shapes(cfg.encoder)
        .into_iter()
        .map(|(name, shape)| (name, Array::zeros(&shape)))
        .collect();
    model_checkpoint(cfg, arrays, serde_json::Value::Null)
}

/// Per-layer count from the weight and bias tensor sizes actually allocated.
fn allocated_params(g: &Graph, prefix: &str, layer: &str) -> usize {
    [format!("{prefix}.{layer}.weight"), format!("{prefix}.{layer}.bias")]
        .iter()
        .map(|n| g.value(g.param_by_name(n).unwrap()).unwrap().len())
        .sum()
}

#[test]
fn published_parameter_counts() {
    assert_eq!(VGG11_ENCODER.layer("conv1_image").unwrap().param_count(), 3_648);
    assert_eq!(VGG11_ENCODER.param_count(), 5_767_152);
    assert_eq!(VGG8_ENCODER.param_count(), 2_448_112);
    assert_eq!(DECODER.param_count(), 4_020_353);
    assert_eq!(POSE_NETWORK.param_count(), 1_599_062);
    assert_eq!(DECODER.layer("conv4").unwrap().param_count(), 442_496);
}

#[test]
fn audit_flags_only_known_anomalies() {
    let audits = arch::audit();
    assert_eq!(audits.len(), ALL_TABLES.len());
    let mut flagged = Vec::new();
    for a in &audits {
        assert!(a.total_matches, "{} total {} vs {}", a.table, a.computed_total, a.published_total);
        for l in a.mismatches() {
            assert!(l.known_anomaly, "{} {}", a.table, l.layer);
            flagged.push((a.table, l.layer));
        }
    }
    assert_eq!(flagged, KNOWN_ANOMALIES.to_vec());
}

#[test]
fn allocated_tensors_match_tables() {
    let mut rng = common::rng(0);
    for variant in [EncoderVariant::Vgg11, EncoderVariant::Vgg8] {
        let mut g = Graph::new();
        DepthNetwork::new(&mut g, variant, &mut rng);
        assert_eq!(g.param_count(), variant.table().param_count() + DECODER.param_count());
        for t in [variant.table(), &DECODER] {
            for l in t.layers.iter().filter(|l| l.has_params()) {
                assert_eq!(allocated_params(&g, "depth", l.name), l.param_count(), "{}", l.name);
            }
        }
    }
    let mut g = Graph::new();
    PoseNetwork::new(&mut g, PoseParameterization::Exponential, &mut rng);
    assert_eq!(g.param_count(), POSE_NETWORK.param_count());
}

#[test]
fn resolution_must_be_multiple_of_32() {
    for (h, w) in [(0, 64), (64, 60), (48, 64)] {
        let cfg = ModelConfig::new(EncoderVariant::Vgg8, PoseParameterization::Euler, h, w);
        assert!(matches!(cfg.validate(), Err(ModelError::BadResolution { .. })));
    }
    assert!(vgg8_config().validate().is_ok());
    let ckpt = zero_checkpoint(&vgg8_config());
    assert!(matches!(Predictor::new(&ckpt, 64, 48), Err(ModelError::BadResolution { .. })));
}

#[test]
fn output_shape_and_range_at_64() {
    for variant in [EncoderVariant::Vgg8, EncoderVariant::Vgg11] {
        let mut rng = common::rng(1);
        let mut g = Graph::new();
        let net = DepthNetwork::new(&mut g, variant, &mut rng);
        let image = g.constant(common::uniform(&mut rng, &[1, 3, 64, 64], 0.0, 1.0));
        let depth = g.constant(common::uniform(&mut rng, &[1, 2, 64, 64], 0.0, 5.0));
        let out = net.apply(&mut g, image, depth).unwrap();
        let v = g.eval(out).unwrap();
        assert_eq!(v.shape(), &[1, 1, 64, 64]);
        assert!(v.data().iter().all(|&z| (MIN_DEPTH..=MAX_DEPTH).contains(&z)));
    }
}

#[test]
fn zero_network_predicts_constant_softplus_of_zero() {
    let (_, triplets) = synthetic_set(1, 3);
    let t = &triplets[0].triplet;
    let out = infer(&zero_checkpoint(&vgg8_config()), &t.image_curr, &t.sparse).unwrap();
    assert_eq!(out.len(), 64 * 64);
    assert!(out.validity.iter().all(|&v| v));
    let expected = std::f64::consts::LN_2;
    assert!(out.depth.iter().all(|&z| (z - expected).abs() < 1e-15), "{}", out.depth[0]);
}

#[test]
fn zero_pose_network_gives_identity() {
    for param in [PoseParameterization::Exponential, PoseParameterization::Euler] {
        let mut rng = common::rng(2);
        let mut g = Graph::new();
        let net = PoseNetwork::new(&mut g, param, &mut rng);
        for p in g.params().to_vec() {
            let shape = g.value(p).unwrap().shape().to_vec();
            g.set_value(p, Array::zeros(&shape)).unwrap();
        }
        let a = g.constant(common::uniform(&mut rng, &[2, 3, 64, 64], 0.0, 1.0));
        let b = g.constant(common::uniform(&mut rng, &[2, 3, 64, 64], 0.0, 1.0));
        let pose = net.apply(&mut g, a, b).unwrap();
        g.forward(&[pose.rotation, pose.translation]).unwrap();
        let r = g.value(pose.rotation).unwrap().data();
        for (i, &x) in r.iter().enumerate() {
            let id = if (i % 9) % 4 == 0 { 1.0 } else { 0.0 };
            assert_eq!(x, id);
        }
        assert!(g.value(pose.translation).unwrap().data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn initial_poses_are_near_identity() {
    let mut rng = common::rng(4);
    let mut g = Graph::new();
    let net = PoseNetwork::new(&mut g, PoseParameterization::Exponential, &mut rng);
    let a = g.constant(common::uniform(&mut rng, &[1, 3, 64, 64], 0.0, 1.0));
    let b = g.constant(common::uniform(&mut rng, &[1, 3, 64, 64], 0.0, 1.0));
    let raw = net.apply_raw(&mut g, a, b).unwrap();
    assert!(g.eval(raw).unwrap().data().iter().all(|x| x.abs() < 0.05));
}

#[test]
fn euler_and_exponential_share_translation_pathway() {
    let mut outputs = Vec::new();
    for param in [PoseParameterization::Exponential, PoseParameterization::Euler] {
        let mut rng = common::rng(5);
        let mut g = Graph::new();
        let net = PoseNetwork::new(&mut g, param, &mut rng);
        // Larger output weights so rotations differ visibly.
        let w = g.param_by_name("pose.output.weight").unwrap();
        let scaled = g.value(w).unwrap().map(|x| 100.0 * x);
        g.set_value(w, scaled).unwrap();
        let a = g.constant(common::uniform(&mut rng, &[1, 3, 64, 64], 0.0, 1.0));
        let b = g.constant(common::uniform(&mut rng, &[1, 3, 64, 64], 0.0, 1.0));
        let pose = net.apply(&mut g, a, b).unwrap();
        g.forward(&[pose.rotation, pose.translation]).unwrap();
        outputs.push((g.value(pose.rotation).unwrap().clone(), g.value(pose.translation).unwrap().clone()));
    }
    assert_eq!(outputs[0].1, outputs[1].1);
    assert_ne!(outputs[0].0, outputs[1].0);
}

#[test]
fn every_parameter_receives_gradient() {
    let (set, _) = synthetic_set(1, 6);
    let s = &set.samples[0];
    let mut rng = common::rng(6);
    let mut g = Graph::new();
    let depth_net = DepthNetwork::new(&mut g, EncoderVariant::Vgg11, &mut rng);
    let pose_net = PoseNetwork::new(&mut g, PoseParameterization::Exponential, &mut rng);
    let img = |g: &mut Graph, a: &Array| g.constant(a.clone().reshaped(&[1, 3, 64, 64]).unwrap());
    let image_t = img(&mut g, &s.image_curr);
    let image_prev = img(&mut g, &s.image_prev);
    let image_next = img(&mut g, &s.image_next);
    let din = g.constant(s.depth_input.clone().reshaped(&[1, 2, 64, 64]).unwrap());
    let depth = depth_net.apply(&mut g, image_t, din).unwrap();
    let fwd_prev = pose_net.apply(&mut g, image_t, image_prev).unwrap();
    let bwd_prev = pose_net.apply(&mut g, image_prev, image_t).unwrap();
    let fwd_next = pose_net.apply(&mut g, image_t, image_next).unwrap();
    let bwd_next = pose_net.apply(&mut g, image_next, image_t).unwrap();
    let sparse_depth = g.constant(s.sparse_depth.clone().reshaped(&[1, 1, 64, 64]).unwrap());
    let sparse_mask = g.constant(s.sparse_mask.clone().reshaped(&[1, 1, 64, 64]).unwrap());
    let inputs = ObjectiveInputs {
        image_t,
        neighbours: vec![(image_prev, fwd_prev), (image_next, fwd_next)],
        pose_pairs: vec![(fwd_prev, bwd_prev), (fwd_next, bwd_next)],
        depth,
        sparse_depth,
        sparse_mask,
    };
    let terms =
        total_loss(&mut g, &inputs, &set.intrinsics, &LossWeights::kitti(), ObjectiveOptions::default()).unwrap();
    g.forward(&[terms.total]).unwrap();
    g.backward(terms.total).unwrap();
    let dead: Vec<_> = g
        .params()
        .iter()
        .filter(|&&p| g.grad(p).is_none_or(|gr| gr.data().iter().all(|&x| x == 0.0)))
        .map(|&p| g.name(p).unwrap().to_string())
        .collect();
    assert!(dead.is_empty(), "parameters without gradient: {dead:?}");
}

#[test]
fn adam_with_zero_gradient_leaves_parameters() {
    let mut g = Graph::new();
    let x = g.param("x", Array::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
    let zero = g.scale(x, 0.0);
    let loss = g.sum(zero);
    g.forward(&[loss]).unwrap();
    g.backward(loss).unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8);
    for _ in 0..3 {
        adam.step(&mut g, 0.1).unwrap();
    }
    assert_eq!(g.value(x).unwrap().data(), &[1.0, -2.0, 3.0]);
}

#[test]
fn adam_matches_scalar_reference_on_quadratic_bowl() {
    let c = [0.5, -1.5, 2.0];
    let x0 = [3.0, 1.0, -1.0];
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let mut g = Graph::new();
    let x = g.param("x", Array::from_vec(&[3], x0.to_vec()).unwrap());
    let cn = g.constant(Array::from_vec(&[3], c.to_vec()).unwrap());
    let d = g.sub(x, cn).unwrap();
    let sq = g.square(d);
    let loss = g.sum(sq);
    let mut adam = Adam::new(b1, b2, eps);

    let mut reference = x0;
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for t in 1..=25 {
        g.forward(&[loss]).unwrap();
        g.backward(loss).unwrap();
        adam.step(&mut g, lr).unwrap();
        for i in 0..3 {
            let grad = 2.0 * (reference[i] - c[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * grad;
            v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
            let mh = m[i] / (1.0 - f64::powi(b1, t));
            let vh = v[i] / (1.0 - f64::powi(b2, t));
            reference[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for (a, b) in g.value(x).unwrap().data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14, "step {t}: {a} vs {b}");
        }
    }
    // First step moves each coordinate by lr against the gradient sign.
    let mut g1 = Graph::new();
    let x1 = g1.param("x", Array::from_vec(&[1], vec![3.0]).unwrap());
    let sq1 = g1.square(x1);
    let l1 = g1.sum(sq1);
    g1.forward(&[l1]).unwrap();
    g1.backward(l1).unwrap();
    Adam::new(b1, b2, eps).step(&mut g1, lr).unwrap();
    assert!((g1.value(x1).unwrap().data()[0] - (3.0 - lr)).abs() < 1e-9);
}

#[test]
fn learning_rate_schedules() {
    let kitti = TrainConfig::kitti();
    let s = LrSchedule { base: kitti.learning_rate, milestones: kitti.lr_milestones.clone() };
    let rates: Vec<f64> = [0, 17, 18, 23, 24, 29].iter().map(|&e| s.rate(e)).collect();
    assert_eq!(rates, vec![1.2e-4, 1.2e-4, 6e-5, 6e-5, 3e-5, 3e-5]);
    let void = TrainConfig::void();
    let s = LrSchedule { base: void.learning_rate, milestones: void.lr_milestones.clone() };
    assert_eq!([5, 6, 8].map(|e| s.rate(e)), [1e-4, 5e-5, 2.5e-5]);
    assert_eq!((kitti.beta1, kitti.beta2, kitti.batch_size, kitti.epochs), (0.9, 0.999, 8, 30));
    assert_eq!(void.epochs, 10);
    let desk = TrainConfig::desk();
    assert_eq!((desk.encoder, desk.batch_size), (EncoderVariant::Vgg8, 2));
}

#[test]
fn train_config_from_toml() {
    let cfg = TrainConfig::from_toml_str("preset = \"kitti\"\nbatch_size = 4\n[weights]\nw_sm = 0.5\n").unwrap();
    assert_eq!(cfg.batch_size, 4);
    assert_eq!(cfg.weights, LossWeights { w_sm: 0.5, ..LossWeights::kitti() });
    assert_eq!(cfg.learning_rate, 1.2e-4);
    assert_eq!(TrainConfig::from_toml_str("").unwrap(), TrainConfig::desk());
    assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
    assert!(TrainConfig::from_toml_str("preset = \"mars\"").is_err());
    assert!(TrainConfig::from_toml_str("learning_rate = -1.0").is_err());
    assert!(TrainConfig::from_toml_str("encoder = \"vgg16\"").is_err());
    let round = format!("preset = \"kitti\"\n{}", toml::to_string(&cfg).unwrap());
    assert_eq!(TrainConfig::from_toml_str(&round).unwrap(), cfg);
}

fn short_config(steps: usize) -> TrainConfig {
    TrainConfig { max_steps: Some(steps), ..TrainConfig::desk() }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let (set, triplets) = synthetic_set(4, 8);
    let a = train(&set, &short_config(3), |_| {}).unwrap();
    let b = train(&set, &short_config(3), |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 3);
    assert_eq!(a.checkpoint.arrays, b.checkpoint.arrays);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let t = &triplets[0].triplet;
    let p1 = infer(&a.checkpoint, &t.image_curr, &t.sparse).unwrap();
    let p2 = infer(&loaded, &t.image_curr, &t.sparse).unwrap();
    let mut predictor = Predictor::new(&loaded, 64, 64).unwrap();
    let p3 = predictor.predict(&t.image_curr, &t.sparse).unwrap();
    let p4 = predictor.predict(&t.image_curr, &t.sparse).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1, p3);
    assert_eq!(p3, p4);
}

#[test]
fn pose_network_training_runs() {
    let (set, _) = synthetic_set(2, 9);
    let cfg = TrainConfig { pose_source: sdc::models::PoseSource::Network, ..short_config(2) };
    let report = train(&set, &cfg, |_| {}).unwrap();
    assert!(report.log.iter().all(|r| r.total.is_finite() && r.pose >= 0.0));
    assert!(report.checkpoint.get("pose.conv1.weight").is_some());
    // Inference ignores the pose parameters.
    assert!(Predictor::new(&report.checkpoint, 64, 64).is_ok());
}

#[test]
fn checkpoint_mismatch_is_reported() {
    let cfg = vgg8_config();
    let good = zero_checkpoint(&cfg);
    let mut missing = good.clone();
    missing.arrays.retain(|(n, _)| n != "depth.conv3.weight");
    let mut reshaped = good.clone();
    reshaped.arrays[0].1 = Array::zeros(&[1]);
    let mut other_variant = good.clone();
    other_variant.metadata["model"]["encoder"] = "vgg11".into();
    let mut unknown = good.clone();
    unknown.metadata = serde_json::json!({"format": "something-else"});
    for bad in [missing, reshaped, other_variant, unknown] {
        assert!(matches!(Predictor::new(&bad, 64, 64), Err(ModelError::CheckpointMismatch(_))));
    }
}

#[test]
fn inputs_of_wrong_size_are_rejected() {
    let ckpt = zero_checkpoint(&vgg8_config());
    let (_, triplets) = synthetic_set(1, 10);
    let t = &triplets[0].triplet;
    let mut p = Predictor::new(&ckpt, 64, 64).unwrap();
    assert!(matches!(p.predict(&Array::zeros(&[3, 32, 64]), &t.sparse), Err(ModelError::Data(_))));
    assert!(matches!(infer(&ckpt, &Array::zeros(&[64, 64]), &t.sparse), Err(ModelError::Data(_))));
}

#[test]
fn missing_poses_or_small_sets_are_rejected() {
    let triplets = generate_triplets(&SceneConfig::default(), 2, 11, 1).unwrap();
    let items: Vec<_> = triplets.iter().map(|t| (t.triplet.clone(), None::<Pose>, None::<Pose>)).collect();
    let set = TrainingSet::from_triplets(&items, 1).unwrap();
    assert!(matches!(train(&set, &short_config(1), |_| {}), Err(ModelError::Data(_))));
    let one = TrainingSet { samples: set.samples[..1].to_vec(), ..set.clone() };
    let cfg = TrainConfig { pose_source: sdc::models::PoseSource::Network, ..short_config(1) };
    assert!(matches!(train(&one, &cfg, |_| {}), Err(ModelError::Data(_))));
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let (set, _) = synthetic_set(2, 12);
    let cfg = TrainConfig { learning_rate: 1e200, ..short_config(20) };
    match train(&set, &cfg, |_| {}) {
        Err(ModelError::DivergedLoss { step, dump }) => {
            assert!(step > 0);
            let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
            assert_eq!(v["step"]["step"], step);
            assert!(v["parameters"].as_array().unwrap().len() > 10);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.log.len())),
    }
}

#[test]
fn scaffold_input_channels() {
    let (_, triplets) = synthetic_set(1, 13);
    let sparse = &triplets[0].triplet.sparse;
    let input = depth_input(sparse).unwrap();
    let map = sdc::scaffold::scaffold(sparse).unwrap();
    assert_eq!(input.shape(), &[2, 64, 64]);
    assert_eq!(&input.data()[..4096], map.depth.as_slice());
    for (x, v) in input.data()[4096..].iter().zip(&map.validity) {
        assert_eq!(*x, if *v { 1.0 } else { 0.0 });
    }
}

#[test]
fn workers_do_not_change_training_set() {
    let triplets = generate_triplets(&SceneConfig::default(), 5, 14, 1).unwrap();
    let items: Vec<_> = triplets.iter().map(|t| (t.triplet.clone(), Some(t.pose_prev), Some(t.pose_next))).collect();
    assert_eq!(TrainingSet::from_triplets(&items, 1).unwrap(), TrainingSet::from_triplets(&items, 3).unwrap());
}

#[test]
fn two_hundred_steps_halve_the_loss() {
    let (set, _) = synthetic_set(10, 15);
    let report = train(&set, &short_config(200), |_| {}).unwrap();
    let l = &report.log;
    assert_eq!(l.len(), 200);
    let start = l[..5].iter().map(|r| r.total).sum::<f64>() / 5.0;
    let end = l[l.len() - 5..].iter().map(|r| r.total).sum::<f64>() / 5.0;
    assert!(end <= 0.5 * start, "loss {start} -> {end}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn output_stays_in_depth_range(seed in 0u64..1000, weight_scale in 0.1f64..50.0, depth_scale in 0.0f64..200.0) {
        let mut rng = common::rng(seed);
        let mut g = Graph::new();
        let net = DepthNetwork::new(&mut g, EncoderVariant::Vgg8, &mut rng);
        for p in g.params().to_vec() {
            let scaled = g.value(p).unwrap().map(|x| x * weight_scale);
            let noisy = Array::from_fn(scaled.shape(), |i| scaled.data()[i] + rng.random_range(-0.01..0.01));
            g.set_value(p, noisy).unwrap();
        }
        let image = g.constant(common::uniform(&mut rng, &[1, 3, 32, 32], 0.0, 1.0));
        let depth = g.constant(common::uniform(&mut rng, &[1, 2, 32, 32], 0.0, depth_scale.max(1e-3)));
        let out = net.apply(&mut g, image, depth).unwrap();
        let v = g.eval(out).unwrap();
        prop_assert!(v.data().iter().all(|&z| (MIN_DEPTH..=MAX_DEPTH).contains(&z)));
    }

    #[test]
    fn published_match_is_symmetric_in_unit(count in 0usize..10_000_000) {
        // A count always matches its own rendering with three significant digits.
        let text = if count >= 1_000_000 {
            format!("{:.2}M", (count as f64 / 1e6 * 100.0).floor() / 100.0)
        } else if count >= 1000 {
            format!("{}K", count / 1000)
        } else {
            count.to_string()
        };
        prop_assert!(arch::matches_published(count, &text), "{count} vs {text}");
    }
}
