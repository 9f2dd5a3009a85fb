use std::collections::BTreeMap;
use std::time::Instant;

use fusion_core::conv::{factorized_params, full_3d_params};
use fusion_core::layers::{Builder, Mode};
use fusion_core::model::{FusionKind, FusionNetwork, HeadNorm, Inputs, IrBackbone, ModelConfig, Streams};
use fusion_core::{ParamKind, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small spatial extents keep full-width networks cheap; feature sizes do not
/// depend on them because both backbones end in global pooling.
fn small(class_count: usize, width: f64, t: usize) -> ModelConfig {
    ModelConfig { map_size: 32, clip_size: 32, ..ModelConfig::toy(class_count, width, t) }
}

fn random_inputs(rng: &mut ChaCha8Rng, config: &ModelConfig, n: usize) -> Inputs<f32> {
    let mut t = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random::<f32>()).collect()).unwrap()
    };
    let maps = t(&[n, 3, config.map_size, config.map_size]);
    let clips = t(&[n, 3, config.clip_length, config.clip_size, config.clip_size]);
    Inputs { maps: Some(maps), clips: Some(clips) }
}

#[test]
fn full_width_feature_dimensions() {
    let config = small(60, 1.0, 8);
    let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = random_inputs(&mut rng, &config, 2);
    let mut g = net.graph();
    let m = g.constant(inputs.maps.clone().unwrap());
    let c = g.constant(inputs.clips.clone().unwrap());
    let s = net.pose_forward(&mut g, m, Mode::Eval).unwrap();
    let i = net.ir_forward(&mut g, c, Mode::Eval).unwrap();
    assert_eq!(g.shape(s), [2, 512]);
    assert_eq!(g.shape(i), [2, 512]);
    assert_eq!(config.head_input_dim(Streams::Fusion), 1024);
    assert_eq!(net.head.dims(), vec![1024, 256, 128, 60]);
    let y = net.fuse_and_classify(&mut g, Some(i), Some(s), Mode::Eval, 0).unwrap();
    assert_eq!(g.shape(y), [2, 60]);
}

#[test]
fn quarter_width_features_are_128() {
    let config = small(4, 0.25, 8);
    assert_eq!(config.pose_feature_dim(), 128);
    assert_eq!(config.ir_feature_dim(), 128);
    let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 2).unwrap();
    let mut g = net.graph();
    let x = g.constant(Tensor::zeros(&[1, 3, 32, 32]));
    let s = net.pose_forward(&mut g, x, Mode::Eval).unwrap();
    assert_eq!(g.shape(s), [1, 128]);
    // Zero input, zero biases: finite and deterministic.
    assert!(g.value(s).iter().all(|v| v.is_finite()));
    let again = {
        let mut g2 = net.graph();
        let x = g2.constant(Tensor::zeros(&[1, 3, 32, 32]));
        let s2 = net.pose_forward(&mut g2, x, Mode::Eval).unwrap();
        g2.value(s2).to_vec()
    };
    assert_eq!(g.value(s), again.as_slice());
}

#[test]
fn clip_length_does_not_change_feature_size() {
    for t in [8, 20] {
        let config = small(4, 0.125, t);
        let net = FusionNetwork::<f32>::new(&config, Streams::IrOnly, 3).unwrap();
        let mut g = net.graph();
        let x = g.constant(Tensor::zeros(&[1, 3, t, 32, 32]));
        let i = net.ir_forward(&mut g, x, Mode::Eval).unwrap();
        assert_eq!(g.shape(i), [1, 64]);
    }
}

#[test]
fn wrong_extents_are_rejected() {
    let config = small(4, 0.125, 8);
    let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 4).unwrap();
    let mut g = net.graph();
    let bad_map = g.constant(Tensor::zeros(&[1, 3, 30, 32]));
    assert!(net.pose_forward(&mut g, bad_map, Mode::Eval).is_err());
    let bad_t = g.constant(Tensor::zeros(&[1, 3, 12, 32, 32]));
    assert!(net.ir_forward(&mut g, bad_t, Mode::Eval).is_err());
    let wrong_dim = g.constant(Tensor::zeros(&[1, 100]));
    assert!(net.fuse_and_classify(&mut g, Some(wrong_dim), Some(wrong_dim), Mode::Eval, 0).is_err());
}

#[test]
fn factorized_blocks_match_full_3d_parameter_count() {
    let config = ModelConfig::default();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ir = IrBackbone::new(&mut Builder::new(&mut store, &mut rng), &config).unwrap();
    let blocks = ir.factorized_blocks();
    assert_eq!(blocks.len(), 17);
    for block in blocks {
        let f = block.full;
        let full = full_3d_params(f.in_channels, f.out_channels, f.kernel_time, f.kernel_space);
        let fact = block.weight_count();
        assert_eq!(fact, factorized_params(f.in_channels, f.out_channels, f.kernel_time, f.kernel_space, block.mid_channels));
        assert!(fact <= full, "{f:?}: {fact} > {full}");
        assert!((full - fact) as f64 / full as f64 <= 0.005, "{f:?}: {fact} vs {full}");
    }
    assert_eq!(full_3d_params(64, 64, 3, 3), 110_592);
    assert_eq!(factorized_params(64, 64, 3, 3, 144), 110_592);
}

#[test]
fn parameter_names_form_a_tree() {
    let config = small(10, 0.125, 8);
    for (streams, fusion) in [
        (Streams::Fusion, FusionKind::Concat),
        (Streams::Fusion, FusionKind::LogitAverage),
        (Streams::PoseOnly, FusionKind::Concat),
        (Streams::IrOnly, FusionKind::Concat),
    ] {
        let net = FusionNetwork::<f32>::new(&ModelConfig { fusion, ..config.clone() }, streams, 6).unwrap();
        let names: Vec<&str> = net.params().entries().map(|(_, e)| e.name.as_str()).collect();
        for n in &names {
            assert!(n.split('.').all(|seg| !seg.is_empty()), "{n}");
            let root = n.split('.').next().unwrap();
            assert!(["pose", "ir", "head", "pose_head", "mix"].contains(&root), "{n}");
            // No name is also an interior node of another.
            assert!(!names.iter().any(|m| m.starts_with(&format!("{n}."))), "{n}");
        }
        assert_eq!(net.params().trainable_count("pose.") > 0, streams.uses_pose());
        assert_eq!(net.params().trainable_count("ir.") > 0, streams.uses_ir());
    }
}

#[test]
fn same_seed_gives_same_weights() {
    let config = small(4, 0.125, 8);
    let a = FusionNetwork::<f32>::new(&config, Streams::Fusion, 7).unwrap();
    let b = FusionNetwork::<f32>::new(&config, Streams::Fusion, 7).unwrap();
    let c = FusionNetwork::<f32>::new(&config, Streams::Fusion, 8).unwrap();
    let flat = |n: &FusionNetwork<f32>| n.params().entries().flat_map(|(_, e)| e.tensor.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn predictions_are_distributions_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (streams, head_norm, fusion) in [
        (Streams::Fusion, HeadNorm::BatchNorm, FusionKind::Concat),
        (Streams::Fusion, HeadNorm::Dropout(0.5), FusionKind::Concat),
        (Streams::Fusion, HeadNorm::BatchNorm, FusionKind::LogitAverage),
        (Streams::PoseOnly, HeadNorm::BatchNorm, FusionKind::Concat),
        (Streams::IrOnly, HeadNorm::BatchNorm, FusionKind::Concat),
    ] {
        let config = ModelConfig { head_norm, fusion, ..small(5, 0.125, 8) };
        let net = FusionNetwork::<f32>::new(&config, streams, 10).unwrap();
        let mut inputs = random_inputs(&mut rng, &config, 3);
        if !streams.uses_ir() {
            inputs.clips = None;
        }
        if !streams.uses_pose() {
            inputs.maps = None;
        }
        let p = net.predict(&inputs).unwrap();
        assert_eq!(p.shape(), [3, 5]);
        for row in p.data().chunks(5) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn single_stream_heads_take_one_feature_vector() {
    let config = small(60, 1.0, 8);
    for streams in [Streams::PoseOnly, Streams::IrOnly] {
        assert_eq!(config.head_input_dim(streams), 512);
    }
    let net = FusionNetwork::<f32>::new(&small(4, 0.25, 8), Streams::PoseOnly, 11).unwrap();
    assert_eq!(net.head.dims(), vec![128, 256, 128, 4]);
    assert!(net.ir.is_none());
}

#[test]
fn batch_of_sixteen_and_batch_equivariance() {
    let config = small(6, 0.125, 8);
    let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = random_inputs(&mut rng, &config, 16);
    let p = net.predict(&inputs).unwrap();
    assert_eq!(p.shape(), [16, 6]);

    let perm: Vec<usize> = (0..16).map(|i| (i * 5 + 3) % 16).collect();
    let gather = |t: &Tensor<f32>| {
        let per = t.len() / 16;
        let mut shape = t.shape().to_vec();
        shape[0] = 16;
        Tensor::from_vec(&shape, perm.iter().flat_map(|&i| t.data()[i * per..(i + 1) * per].to_vec()).collect()).unwrap()
    };
    let permuted = Inputs { maps: inputs.maps.as_ref().map(gather), clips: inputs.clips.as_ref().map(gather) };
    let q = net.predict(&permuted).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        let a = &p.data()[i * 6..(i + 1) * 6];
        let b = &q.data()[k * 6..(k + 1) * 6];
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-6, "row {k}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn gradients_reach_every_parameter_group() {
    let config = small(4, 0.125, 8);
    let net = FusionNetwork::<f64>::new(&config, Streams::Fusion, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = random_inputs(&mut rng, &config, 4);
    let inputs = Inputs { maps: f.maps.map(|t| t.cast()), clips: f.clips.map(|t| t.cast()) };
    let mut g = net.graph();
    let logits = net.logits(&mut g, &inputs, Mode::Train, 1).unwrap();
    let loss = g.softmax_cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut sq: BTreeMap<String, f64> = BTreeMap::new();
    for (id, gr) in grads.params() {
        let root = net.params().entry(id).name.split('.').next().unwrap().to_string();
        *sq.entry(root).or_default() += gr.iter().map(|v| v * v).sum::<f64>();
    }
    for group in ["pose", "ir", "head"] {
        assert!(sq.get(group).copied().unwrap_or(0.0) > 0.0, "no gradient reached {group}: {sq:?}");
    }
    // Buffers never receive gradients.
    for (id, _) in grads.params() {
        assert_eq!(net.params().entry(id).kind, ParamKind::Trainable);
    }
}

#[test]
fn zeroing_ir_features_changes_predictions() {
    let config = small(5, 0.125, 8);
    let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 20;
    let inputs = random_inputs(&mut rng, &config, n);
    let mut g = net.graph();
    let m = g.constant(inputs.maps.unwrap());
    let c = g.constant(inputs.clips.unwrap());
    let s = net.pose_forward(&mut g, m, Mode::Eval).unwrap();
    let i = net.ir_forward(&mut g, c, Mode::Eval).unwrap();
    let zero = g.constant(Tensor::zeros(&[n, config.ir_feature_dim()]));
    let full = net.fuse_and_classify(&mut g, Some(i), Some(s), Mode::Eval, 0).unwrap();
    let ablated = net.fuse_and_classify(&mut g, Some(zero), Some(s), Mode::Eval, 0).unwrap();
    let (pf, pa) = (g.softmax(full).unwrap(), g.softmax(ablated).unwrap());
    let differing = g
        .value(pf)
        .chunks(5)
        .zip(g.value(pa).chunks(5))
        .filter(|(a, b)| a.iter().zip(*b).any(|(x, y)| (x - y).abs() > 1e-6))
        .count();
    assert!(differing * 10 >= n * 9, "only {differing}/{n} rows changed");
}

#[test]
fn toy_training_step_is_fast() {
    for width in [0.125, 0.25] {
        let config = ModelConfig::toy(4, width, 8);
        let net = FusionNetwork::<f32>::new(&config, Streams::Fusion, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inputs = random_inputs(&mut rng, &config, 4);
        let start = Instant::now();
        let mut g = net.graph();
        let logits = net.logits(&mut g, &inputs, Mode::Train, 0).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
        let grads = g.backward(loss).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(grads.global_norm().is_finite());
        assert!(elapsed < 5.0, "w={width}: forward+backward took {elapsed:.2}s");
        eprintln!("w={width}: forward+backward on 4 samples in {elapsed:.2}s");
    }
}
