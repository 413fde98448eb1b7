use edgeseg::boundary::BoundaryParams;
use edgeseg::graph::{load_weights_partial, ArchConfig, ModelGraph, ModelKind};
use edgeseg::synth::{generate_scenes, ClassMix};
use edgeseg::train::*;
use edgeseg::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenes(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    generate_scenes(count, size, &ClassMix::default(), seed)
        .unwrap()
        .iter()
        .map(|s| s.to_sample(&BoundaryParams::default()).unwrap())
        .collect()
}

fn learned(g: &ModelGraph) -> Vec<(String, Vec<f32>)> {
    g.params()
        .iter()
        .filter(|p| p.learns())
        .map(|p| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

fn boundary_arch() -> ArchConfig {
    ArchConfig {
        model: ModelKind::Boundary,
        base_width: 4,
        ..ArchConfig::default()
    }
}

fn quick(stage: Stage, iters: usize) -> TrainConfig {
    TrainConfig {
        stage,
        total_iters: iters,
        batch_size: 2,
        crop: Some(32),
        ..TrainConfig::default()
    }
}

#[test]
fn lr_steps_down_by_the_factor() {
    let cfg = TrainConfig {
        base_lr: 0.01,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(0, &cfg), 0.01);
    assert_eq!(lr_at(11999, &cfg), 0.01);
    assert!((lr_at(12000, &cfg) - 0.001).abs() < 1e-15);
    assert!((lr_at(24001, &cfg) - 0.0001).abs() < 1e-15);
}

#[test]
fn sgd_with_zero_lr_is_a_no_op() {
    let mut w = vec![0.5, -1.25, 3.0];
    let mut v = vec![0.0; 3];
    sgd_step(&mut w, &[1.0, 2.0, -3.0], 0.0, 0.9, 0.00015, &mut v).unwrap();
    assert_eq!(w, [0.5, -1.25, 3.0]);
}

#[test]
fn sgd_without_momentum_or_decay_is_gradient_descent() {
    let mut w = vec![1.0f32, -2.0];
    let g = [0.5f32, -4.0];
    let mut v = vec![0.3, 0.7];
    sgd_step(&mut w, &g, 0.1, 0.0, 0.0, &mut v).unwrap();
    assert_eq!(w, [1.0 - 0.1 * 0.5, -2.0 + 0.1 * 4.0]);
}

#[test]
fn two_momentum_steps_on_a_quadratic() {
    // f(w) = a/2 · w², gradient a·w
    let (a, lr, m, wd, w0) = (3.0f64, 0.05, 0.9, 0.01, 2.0);
    let mut w = vec![w0 as f32];
    let mut v = vec![0.0f32];
    let (mut ew, mut ev) = (w0, 0.0);
    for _ in 0..2 {
        let g = [(a * w[0] as f64) as f32];
        sgd_step(&mut w, &g, lr, m, wd, &mut v).unwrap();
        ev = m * ev - lr * (a * ew + wd * ew);
        ew += ev;
    }
    assert!((w[0] as f64 - ew).abs() < 1e-6, "{} vs {ew}", w[0]);
    assert!((v[0] as f64 - ev).abs() < 1e-6);
}

#[test]
fn sgd_rejects_misaligned_buffers() {
    let mut w = vec![0.0; 3];
    assert!(sgd_step(&mut w, &[0.0; 2], 0.1, 0.9, 0.0, &mut [0.0; 3]).is_err());
    assert!(sgd_step(&mut w, &[0.0; 3], 0.1, 0.9, 0.0, &mut [0.0; 4]).is_err());
}

#[test]
fn weight_decay_shrinks_norm_without_gradient() {
    let mut w: Vec<f32> = (0..16).map(|i| (i as f32 - 7.5) / 4.0).collect();
    let mut v = vec![0.0; 16];
    let norm = |w: &[f32]| w.iter().map(|x| (*x as f64).powi(2)).sum::<f64>();
    let mut last = norm(&w);
    for _ in 0..20 {
        sgd_step(&mut w, &[0.0; 16], 0.01, 0.9, 0.00015, &mut v).unwrap();
        let n = norm(&w);
        assert!(n < last);
        last = n;
    }
}

#[test]
fn xavier_variance_matches_fan() {
    let dims = [50, 40, 3, 3];
    let more: Vec<f32> = (2..8)
        .flat_map(|s| xavier_init(&dims, &mut ChaCha8Rng::seed_from_u64(s)).data().to_vec())
        .collect();
    let n = more.len() as f64;
    assert!(n >= 1e5);
    let mean = more.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = more.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let expected = 2.0 / ((40 + 50) * 9) as f64;
    assert!((var / expected - 1.0).abs() < 0.1, "variance {var} vs {expected}");
    let limit = (6.0 / ((40 + 50) * 9) as f64).sqrt() as f32;
    assert!(more.iter().all(|x| x.abs() <= limit));
}

#[test]
fn xavier_is_seeded() {
    let a = xavier_init(&[8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(9));
    let b = xavier_init(&[8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(9));
    let c = xavier_init(&[8, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(10));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn built_graphs_start_with_zero_biases() {
    for model in [ModelKind::Boundary, ModelKind::BoundarySegmenter, ModelKind::BoundaryFcn] {
        let g = ArchConfig { model, base_width: 4, ..ArchConfig::default() }.build().unwrap();
        let biases: Vec<_> = g.params().iter().filter(|p| p.name.ends_with(".bias")).collect();
        assert!(!biases.is_empty());
        for p in biases {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{} not zero", p.name);
        }
    }
}

#[test]
fn identity_transform_keeps_the_sample() {
    let s = scenes(1, 64, 3).remove(0);
    assert_eq!(apply_affine(&s, &AffineParams::IDENTITY), s);
    let off = AugmentConfig {
        enabled: false,
        ..AugmentConfig::default()
    };
    assert_eq!(augment_pair(&s, &off, &mut ChaCha8Rng::seed_from_u64(0)), s);
}

#[test]
fn flips_are_involutions_and_keep_the_histogram() {
    let s = scenes(1, 64, 4).remove(0);
    for (h, v) in [(true, false), (false, true), (true, true)] {
        let p = AffineParams {
            hflip: h,
            vflip: v,
            ..AffineParams::IDENTITY
        };
        let once = apply_affine(&s, &p);
        assert_eq!(once.labels.histogram(), s.labels.histogram());
        assert_ne!(once.labels, s.labels);
        assert_eq!(apply_affine(&once, &p), s);
    }
}

#[test]
fn zero_lr_iteration_leaves_weights() {
    let data = scenes(4, 64, 5);
    let mut g = boundary_arch().build().unwrap();
    let before = learned(&g);
    let cfg = TrainConfig {
        base_lr: 0.0,
        ..quick(Stage::BoundaryPretrain, 1)
    };
    let out = train_stage(&mut g, &data, &cfg, &AugmentConfig::default()).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(learned(&g), before);
}

#[test]
fn trace_has_one_row_per_iteration() {
    let data = scenes(4, 64, 6);
    let mut g = boundary_arch().build().unwrap();
    let out = train_stage(&mut g, &data, &quick(Stage::BoundaryPretrain, 7), &AugmentConfig::default()).unwrap();
    let iters: Vec<usize> = out.trace.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (0..7).collect::<Vec<_>>());
    assert!(out.trace.iter().all(|r| r.stage == Stage::BoundaryPretrain && r.loss.is_finite()));
}

#[test]
fn boundary_detector_halves_its_loss() {
    let data = scenes(20, 64, 7);
    let mut g = boundary_arch().build().unwrap();
    let cfg = quick(Stage::BoundaryPretrain, 500);
    let out = train_stage(&mut g, &data, &cfg, &AugmentConfig::default()).unwrap();
    let (first, last) = out.first_last_means(20);
    assert!(last < 0.5 * first, "loss {first:.4} -> {last:.4}");
}

#[test]
fn training_is_bit_deterministic() {
    let data = scenes(4, 64, 8);
    let run = || {
        let mut g = boundary_arch().build().unwrap();
        let out = train_stage(&mut g, &data, &quick(Stage::BoundaryPretrain, 10), &AugmentConfig::default()).unwrap();
        let losses: Vec<u64> = out.trace.iter().map(|r| r.loss.to_bits()).collect();
        (losses, learned(&g))
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_data_and_missing_targets_are_errors() {
    let mut g = boundary_arch().build().unwrap();
    let cfg = quick(Stage::BoundaryPretrain, 1);
    assert!(matches!(
        train_stage(&mut g, &[], &cfg, &AugmentConfig::default()),
        Err(Error::Data(_))
    ));
    let mut bare = scenes(1, 64, 9);
    bare[0].boundary = None;
    assert!(train_stage(&mut g, &bare, &cfg, &AugmentConfig::default()).is_err());
}

#[test]
fn nan_loss_aborts_with_the_iteration() {
    let mut data = scenes(2, 64, 10);
    for s in &mut data {
        let shape = s.image.shape();
        s.image = Tensor::from_vec(shape, vec![f32::NAN; shape.numel()]).unwrap();
    }
    let mut g = boundary_arch().build().unwrap();
    let err = train_stage(&mut g, &data, &quick(Stage::BoundaryPretrain, 5), &AugmentConfig::default()).unwrap_err();
    match err {
        Error::Diverged { stage, iter, loss } => {
            assert_eq!(stage, "boundary_pretrain");
            assert_eq!(iter, 0);
            assert!(loss.is_nan());
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn staged_artifacts_load_and_assembly_starts_near_component_losses() {
    let data = scenes(8, 64, 11);
    let arch = ArchConfig {
        base_width: 4,
        ..ArchConfig::default()
    };
    let stage = |s, iters| quick(s, iters);
    let cfg = PipelineConfig {
        boundary: stage(Stage::BoundaryPretrain, 150),
        segmenter: stage(Stage::SegmenterPretrain, 150),
        multiscale: stage(Stage::PerScale, 150),
        finetune: TrainConfig {
            base_lr: 1e-3,
            ..stage(Stage::AssembledFinetune, 5)
        },
        skip_boundary_pretrain: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let out = staged_pipeline(&data, &arch, &cfg, &AugmentConfig::default(), Some(dir.path())).unwrap();
    assert_eq!(out.trace.len(), 305);
    let labels: Vec<&str> = out.artifacts.iter().map(|a| a.label.as_str()).collect();
    assert_eq!(labels, ["boundary", "segmenter", "assembled"]);
    for a in &out.artifacts {
        let mut g = arch.build().unwrap();
        let report = load_weights_partial(&mut g, a.path.as_ref().unwrap()).unwrap();
        assert!(!report.loaded.is_empty(), "{}", a.label);
        assert!(report.unused.is_empty() && report.mismatched.is_empty(), "{}: {report:?}", a.label);
    }
    let components = out.boundary_loss + out.segmenter_loss;
    assert!(
        out.finetune_initial_loss <= 1.2 * components,
        "assembled {:.4} vs components {:.4}",
        out.finetune_initial_loss,
        components
    );
}
