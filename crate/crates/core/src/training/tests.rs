use super::*;
use crate::data::{generate_synthetic, SyntheticConfig};
use crate::numerics::Tensor;
use proptest::prelude::*;

#[test]
fn bce_reference_values() {
    let l = bce_loss(&[0.5, 0.5], &[1.0, 0.0], &[true, true]).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    let exact = bce_loss(&[1.0, 0.0], &[1.0, 0.0], &[true, true]).unwrap();
    assert!(exact < 1e-11);
    // Masked positions do not count, however wrong they are.
    let masked = bce_loss(&[0.5, 0.0], &[1.0, 1.0], &[true, false]).unwrap();
    assert!((masked - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(bce_loss(&[0.5], &[1.0], &[false]).is_err());
    assert!(bce_loss(&[0.5], &[1.0, 0.0], &[true]).is_err());
}

proptest! {
    #[test]
    fn bce_matches_scalar_formula(
        rows in proptest::collection::vec((0.001f64..0.999, any::<bool>(), any::<bool>()), 1..40)
    ) {
        prop_assume!(rows.iter().any(|r| r.2));
        let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
        let m: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let mut total = 0.0;
        let mut n = 0.0;
        for r in &rows {
            if r.2 {
                total += if r.1 { -r.0.ln() } else { -(1.0 - r.0).ln() };
                n += 1.0;
            }
        }
        let got = bce_loss(&p, &y, &m).unwrap();
        prop_assert!((got - total / n).abs() <= 1e-12 * (1.0 + got.abs()));
    }

    #[test]
    fn graph_bce_agrees_with_slice_bce(
        rows in proptest::collection::vec((0.001f64..0.999, any::<bool>(), any::<bool>()), 1..40)
    ) {
        prop_assume!(rows.iter().any(|r| r.2));
        let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
        let m: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let w: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut g = Graph::new();
        let probs = g.constant(Tensor::matrix(p.len(), 1, p.clone()).unwrap());
        let loss = g.bce(probs, &y, &w, BCE_EPS).unwrap();
        let expected = bce_loss(&p, &y, &m).unwrap();
        prop_assert!((g.value(loss).data()[0] - expected).abs() <= 1e-12);
    }
}

#[test]
fn noam_schedule_reference_points() {
    assert!((noam_lr(4000, 4000, 1e-3) - 1e-3).abs() < 1e-18);
    assert!((noam_lr(2000, 4000, 1e-3) - 5e-4).abs() < 1e-18);
    assert!((noam_lr(1, 4000, 1e-3) - 1e-3 / 4000.0).abs() < 1e-18);
    assert!((noam_lr(16000, 4000, 1e-3) - 5e-4).abs() < 1e-18);
    let mut prev = 0.0;
    for s in 1..=4000 {
        let lr = noam_lr(s, 4000, 1e-3);
        assert!(lr > prev);
        prev = lr;
    }
    for s in 4001..8000 {
        let lr = noam_lr(s, 4000, 1e-3);
        assert!(lr < prev);
        prev = lr;
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut params = vec![Tensor::filled(&[2, 3], 0.7), Tensor::scalar(-1.5)];
    let before = params.clone();
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    let grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for _ in 0..5 {
        adam.step(&mut params, &grads, 0.1).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(adam.step_count(), 5);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    // Bias correction makes the first update lr · g / |g| for any g.
    for g in [1.0, -3.0, 1e-3] {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        adam.step(&mut params, &[Tensor::scalar(g)], 0.01).unwrap();
        let moved = params[0].data()[0];
        assert!((moved + 0.01 * g.signum()).abs() < 1e-7, "{g} {moved}");
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    for _ in 0..500 {
        let x = params[0].data()[0];
        adam.step(&mut params, &[Tensor::scalar(2.0 * x)], 0.01).unwrap();
    }
    assert!(params[0].data()[0].abs() < 0.01);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    let err = adam.step(&mut params, &[Tensor::scalar(f64::NAN)], 0.01);
    assert!(matches!(err, Err(Error::NonFinite(_))));
}

#[test]
fn clipping_rescales_to_the_bound() {
    let mut grads = vec![Tensor::row(vec![3.0, 0.0]).unwrap(), Tensor::scalar(4.0)];
    let norm = clip_global_norm(&mut grads, 1.0);
    assert!((norm - 5.0).abs() < 1e-15);
    let after: f64 = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    assert!((after - 1.0).abs() < 1e-15);
    assert!((grads[1].data()[0] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::scalar(0.5)];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data()[0], 0.5);
    let mut off = vec![Tensor::scalar(50.0)];
    clip_global_norm(&mut off, 0.0);
    assert_eq!(off[0].data()[0], 50.0);
}

fn tiny_dataset(seed: u64) -> Dataset {
    generate_synthetic(SyntheticConfig::new(40, 15, 3, seed))
        .unwrap()
        .dataset()
        .unwrap()
}

fn tiny_config(architecture: Architecture) -> TrainConfig {
    TrainConfig {
        architecture,
        layers: 1,
        d_model: 8,
        heads: 2,
        d_ff: 16,
        window: 20,
        stride: 20,
        batch_size: 8,
        warmup_steps: 10,
        peak_lr: 0.005,
        max_epochs: 3,
        patience: 0,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let data = tiny_dataset(1);
    for arch in Architecture::ALL {
        let mut cfg = tiny_config(arch);
        cfg.embedding = EmbeddingDetail::B;
        cfg.layers = 2;
        cfg.window = 60;
        cfg.stride = 60;
        let model = Model::new(
            cfg.model_config(data.vocabulary.num_exercises(), data.vocabulary.num_categories()),
            &mut RngStream::new(4),
        )
        .unwrap();
        let all: Vec<usize> = (0..data.users.len()).collect();
        let examples = examples_for(&data, &all, cfg.window, cfg.stride).unwrap();
        let refs: Vec<&WindowedExample> = examples.iter().collect();
        let (_, grads) = batch_gradients(&model, &refs, &mut ForwardContext::eval()).unwrap();
        for ((name, _), g) in model.params().iter().zip(&grads) {
            // The reserved unknown-id rows never appear in real data.
            assert!(g.norm_sq() > 0.0, "{arch}: {name} has zero gradient");
        }
    }
}

#[test]
fn small_step_against_gradient_lowers_loss() {
    let data = tiny_dataset(2);
    for arch in Architecture::ALL {
        let cfg = tiny_config(arch);
        let mut model = Model::new(
            cfg.model_config(data.vocabulary.num_exercises(), data.vocabulary.num_categories()),
            &mut RngStream::new(5),
        )
        .unwrap();
        let examples = examples_for(&data, &[0, 1, 2, 3], cfg.window, cfg.stride).unwrap();
        let refs: Vec<&WindowedExample> = examples.iter().collect();
        let (before, grads) = batch_gradients(&model, &refs, &mut ForwardContext::eval()).unwrap();
        assert!((before - batch_loss(&model, &refs).unwrap()).abs() < 1e-12);
        for (p, g) in model.params_mut().tensors_mut().iter_mut().zip(&grads) {
            for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                *x -= 1e-4 * d;
            }
        }
        let after = batch_loss(&model, &refs).unwrap();
        assert!(after < before, "{arch}: {before} -> {after}");
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = tiny_config(Architecture::Ssakt);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn config_is_strict() {
    let text = TrainConfig::default().to_toml_string().unwrap();
    let missing: String = text
        .lines()
        .filter(|l| !l.starts_with("warmup_steps"))
        .map(|l| format!("{l}\n"))
        .collect();
    match TrainConfig::from_toml_str(&missing) {
        Err(Error::Config(msg)) => assert!(msg.contains("warmup_steps"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let unknown = format!("{text}learning_rate_typo = 3\n");
    assert!(matches!(TrainConfig::from_toml_str(&unknown), Err(Error::Config(_))));
    let versioned = text.replace("schema_version = 1", "schema_version = 2");
    assert!(TrainConfig::from_toml_str(&versioned).is_err());
}

#[test]
fn invalid_values_are_rejected() {
    let bad = [
        TrainConfig { heads: 3, ..tiny_config(Architecture::Saint) },
        TrainConfig { stride: 30, ..tiny_config(Architecture::Saint) },
        TrainConfig { batch_size: 0, ..tiny_config(Architecture::Saint) },
        TrainConfig { peak_lr: -1.0, ..tiny_config(Architecture::Saint) },
        TrainConfig { dropout: 1.0, ..tiny_config(Architecture::Saint) },
        TrainConfig { split_test: 0.5, ..tiny_config(Architecture::Saint) },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(tiny_config(Architecture::Saint).validate().is_ok());
}

fn run(cfg: &TrainConfig, data: &Dataset) -> Result<TrainReport> {
    let splits = cfg.split(data)?;
    train(cfg, data, &splits, "hash", |_| {})
}

#[test]
fn training_is_deterministic() {
    let data = tiny_dataset(3);
    for arch in [Architecture::Saint, Architecture::Ltmti] {
        let cfg = tiny_config(arch);
        let a = run(&cfg, &data).unwrap();
        let b = run(&cfg, &data).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
        let other = run(&TrainConfig { seed: 4, ..cfg }, &data).unwrap();
        assert_ne!(other.history, a.history);
    }
}

#[test]
fn best_snapshot_has_highest_validation_auc() {
    let data = tiny_dataset(4);
    let mut cfg = tiny_config(Architecture::Saint);
    cfg.max_epochs = 5;
    let mut seen = Vec::new();
    let splits = cfg.split(&data).unwrap();
    let report = train(&cfg, &data, &splits, "hash", |log| seen.push(log.clone())).unwrap();
    assert_eq!(seen, report.history);
    assert_eq!(report.history.len(), 5);
    let best = report.history.iter().map(|l| l.val_auc).fold(f64::MIN, f64::max);
    assert_eq!(report.best.val_auc, Some(best));
    let first_best = report.history.iter().find(|l| l.val_auc == best).unwrap();
    assert_eq!(report.best.epoch, first_best.epoch);
    assert_eq!(report.best.train_config.as_ref(), Some(&cfg));
    assert_eq!(report.best.vocabulary, data.vocabulary);
}

#[test]
fn step_limit_and_patience_stop_early() {
    let data = tiny_dataset(5);
    let mut cfg = tiny_config(Architecture::Utmti);
    cfg.max_epochs = 10;
    cfg.max_steps = 4;
    let report = run(&cfg, &data).unwrap();
    assert_eq!(report.steps, 4);
    assert_eq!(report.history.len(), 1);

    cfg.max_steps = 0;
    cfg.patience = 1;
    let report = run(&cfg, &data).unwrap();
    let n = report.history.len();
    if n < 10 {
        // Stopping means the last epoch did not beat the one before.
        let last = report.history[n - 1].val_auc;
        assert!(report.history[..n - 1].iter().any(|l| l.val_auc >= last));
    }
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let data = tiny_dataset(6);
    let mut cfg = tiny_config(Architecture::Saint);
    cfg.peak_lr = 1e300;
    cfg.warmup_steps = 1;
    cfg.grad_clip = 0.0;
    match run(&cfg, &data) {
        Err(Error::Diverged { step, .. }) => assert!(step >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.history)),
    }
}

#[test]
fn ltmti_plan_scores_each_target_once() {
    let data = tiny_dataset(7);
    let examples = examples_for(&data, &[0], 20, 10).unwrap();
    let refs: Vec<&WindowedExample> = examples.iter().collect();
    let targets: usize = examples.iter().map(|e| e.num_targets()).sum();
    let plan = plan_batch(Architecture::Ltmti, &refs, false);
    assert_eq!(plan.scored.len(), targets);
    assert_eq!(plan.inputs.len(), targets);
    let total: f64 = plan.weights.iter().sum();
    assert!((total - targets as f64).abs() < 1e-9);
    let every = plan_batch(Architecture::Saint, &refs, true);
    assert_eq!(every.scored.len(), targets);
    assert_eq!(every.rows(), 20 * examples.len());
}
