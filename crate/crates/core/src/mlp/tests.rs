use super::*;
use crate::seed;

fn toy_config(hidden: Vec<usize>, dropout_p: f64) -> MlpConfig {
    MlpConfig {
        hidden_sizes: hidden,
        learning_rate: 1e-2,
        batch_size: 8,
        dropout_p,
        max_epochs: 200,
        patience: 50,
        seed: 3,
        ..MlpConfig::default()
    }
}

fn random_batch(rows: usize, cols: usize, seed_value: u64) -> Matrix {
    let mut rng = seed::rng(seed_value);
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-2.0..3.0)).collect(),
    }
}

fn loss_with(state: &MlpState, x: &Matrix, y: &[f64], masks: &[Option<Vec<f64>>]) -> f64 {
    let cache = state.forward_train_with_masks(x, masks).unwrap();
    train::mse(&cache.predictions, y)
}

/// Max relative error between analytic and central-difference gradients
/// over all parameters.
fn gradient_check(state: &MlpState, x: &Matrix, y: &[f64], masks: &[Option<Vec<f64>>]) -> f64 {
    let cache = state.forward_train_with_masks(x, masks).unwrap();
    let analytic = state.backward(&cache, y).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..state.params.len() {
        let mut plus = state.clone();
        let mut minus = state.clone();
        plus.params[i] += h;
        minus.params[i] -= h;
        let numeric = (loss_with(&plus, x, y, masks) - loss_with(&minus, x, y, masks)) / (2.0 * h);
        let a = analytic.0[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn init_is_deterministic_and_shaped() {
    let cfg = MlpConfig::default();
    let a = init(&cfg, 9).unwrap();
    let b = init(&cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params, init(&cfg, 10).unwrap().params);
    assert_eq!(
        a.layer_shapes(),
        vec![(7, 231), (231, 421), (421, 392), (392, 1)]
    );
    let one = init(&toy_config(vec![4], 0.5), 0).unwrap();
    assert_eq!(one.layer_shapes(), vec![(7, 4), (4, 1)]);
    assert!(one.layout.output().bn.is_none());
    assert!(init(&toy_config(vec![4, 0], 0.5), 0).is_err());
    // biases zero, gammas one
    for s in one.layout.hidden() {
        assert!(one.params[s.bias.clone()].iter().all(|&b| b == 0.0));
        let (g, be) = s.bn.clone().unwrap();
        assert!(one.params[g].iter().all(|&v| v == 1.0));
        assert!(one.params[be].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_output_weights_give_bias() {
    let mut s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    let out = s.layout.output().clone();
    s.params[out.weights].fill(0.0);
    s.params[out.bias.start] = 4.25;
    let x = random_batch(5, 7, 2);
    assert_eq!(s.forward_infer(&x).unwrap(), vec![4.25; 5]);
}

#[test]
fn inference_is_repeatable() {
    let s = init(&toy_config(vec![6, 4], 0.5), 1).unwrap();
    let x = random_batch(9, 7, 4);
    assert_eq!(s.forward_infer(&x).unwrap(), s.forward_infer(&x).unwrap());
}

#[test]
fn train_mode_matches_infer_with_matching_stats() {
    let mut s = init(&toy_config(vec![6, 4], 0.0), 5).unwrap();
    let x = random_batch(12, 7, 6);
    let cache = s.forward_train(&x, &mut seed::rng(0)).unwrap();
    for (l, hc) in cache.hidden.iter().enumerate() {
        s.running_mean[l] = hc.batch_mean.clone();
        s.running_var[l] = hc.batch_var.clone();
    }
    assert_eq!(s.forward_infer(&x).unwrap(), cache.predictions);
}

#[test]
fn train_mode_rejects_single_row() {
    let s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    assert!(s.forward_train(&random_batch(1, 7, 0), &mut seed::rng(0)).is_err());
    assert!(s.forward_infer(&random_batch(1, 7, 0)).is_ok());
    assert!(s.forward_infer(&random_batch(2, 6, 0)).is_err());
}

#[test]
fn forward_train_mode_updates_running_stats() {
    let mut s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    let before = s.running_mean.clone();
    let x = random_batch(6, 7, 0);
    let (_, cache) = s.forward(&x, Mode::Train, &mut seed::rng(0)).unwrap();
    assert!(cache.is_some());
    assert_ne!(s.running_mean, before);
    let after = s.running_mean.clone();
    s.forward(&x, Mode::Infer, &mut seed::rng(0)).unwrap();
    assert_eq!(s.running_mean, after);
    assert!(s.running_var.iter().flatten().all(|&v| v >= 0.0));
}

#[test]
fn batch_norm_output_has_beta_mean_and_gamma_variance() {
    let mut s = init(&toy_config(vec![5, 3], 0.0), 2).unwrap();
    let mut rng = seed::rng(8);
    for slots in s.layout.hidden().to_vec() {
        let (g, b) = slots.bn.unwrap();
        for v in &mut s.params[g] {
            *v = rng.random_range(0.5..2.0);
        }
        for v in &mut s.params[b] {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut x = random_batch(32, 7, 9);
    x.data.iter_mut().for_each(|v| *v *= 40.0);
    let cache = s.forward_train(&x, &mut seed::rng(0)).unwrap();
    let hc = &cache.hidden[0];
    let slots = &s.layout.hidden()[0];
    let (g, b) = slots.bn.clone().unwrap();
    let d = slots.in_dim;
    for j in 0..d {
        let col: Vec<f64> = (0..32).map(|r| hc.bn_out[r * d + j]).collect();
        let mean = col.iter().sum::<f64>() / 32.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!((mean - s.params[b.start + j]).abs() < 1e-6);
        assert!((var - s.params[g.start + j].powi(2)).abs() < 1e-6, "{var}");
    }
}

#[test]
fn zero_residuals_give_zero_gradients() {
    let s = init(&toy_config(vec![5, 3], 0.5), 4).unwrap();
    let x = random_batch(6, 7, 1);
    let cache = s.forward_train(&x, &mut seed::rng(2)).unwrap();
    let g = s.backward(&cache, &cache.predictions.clone()).unwrap();
    assert!(g.0.iter().all(|&v| v == 0.0));
}

#[test]
fn doubling_residuals_doubles_output_gradients() {
    let s = init(&toy_config(vec![5, 3], 0.0), 4).unwrap();
    let x = random_batch(6, 7, 1);
    let cache = s.forward_train(&x, &mut seed::rng(2)).unwrap();
    let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
    let y2: Vec<f64> = cache
        .predictions
        .iter()
        .zip(&y)
        .map(|(p, t)| p - 2.0 * (p - t))
        .collect();
    let g1 = s.backward(&cache, &y).unwrap();
    let g2 = s.backward(&cache, &y2).unwrap();
    let out = s.layout.output();
    for i in out.weights.clone().chain(out.bias.clone()) {
        assert!((g2.0[i] - 2.0 * g1.0[i]).abs() <= 1e-12 * g1.0[i].abs().max(1.0));
    }
}

#[test]
fn gradients_match_finite_differences_without_dropout() {
    let mut s = init(&toy_config(vec![5, 3], 0.0), 11).unwrap();
    // move γ, β and biases off their init so every group is exercised
    let mut rng = seed::rng(12);
    s.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
    let x = random_batch(10, 7, 13);
    let y: Vec<f64> = (0..10).map(|i| (i as f64).sin() * 2.0).collect();
    let masks = vec![None, None];
    let err = gradient_check(&s, &x, &y, &masks);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_match_finite_differences_with_frozen_dropout_mask() {
    let mut s = init(&toy_config(vec![5, 3], 0.5), 21).unwrap();
    let mut rng = seed::rng(22);
    s.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
    let x = random_batch(10, 7, 23);
    let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos()).collect();
    let cache = s.forward_train(&x, &mut seed::rng(24)).unwrap();
    let masks = cache.masks();
    assert!(masks.iter().all(Option::is_some));
    let err = gradient_check(&s, &x, &y, &masks);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn dropout_preserves_expectation() {
    let s = init(&toy_config(vec![4], 0.5), 31).unwrap();
    let x = random_batch(4, 7, 32);
    let mut rng = seed::rng(33);
    let draws = 100_000;
    let first = s.forward_train(&x, &mut rng).unwrap();
    let clean: Vec<f64> = first.hidden[0].pre_act.iter().map(|z| z.max(0.0)).collect();
    let mut acc = vec![0.0; clean.len()];
    for _ in 0..draws {
        let c = s.forward_train(&x, &mut rng).unwrap();
        let h = &c.hidden[0];
        let mask = h.mask.as_ref().unwrap();
        for ((a, z), m) in acc.iter_mut().zip(&h.pre_act).zip(mask) {
            *a += z.max(0.0) * m;
        }
    }
    for (a, c) in acc.iter().zip(&clean) {
        let mean = a / draws as f64;
        assert!((mean - c).abs() <= 0.01 * c.abs(), "{mean} vs {c}");
    }
}

#[test]
fn adam_zero_gradient_and_first_step() {
    let mut s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    s.adam_m.fill(0.5);
    s.adam_v.fill(0.25);
    let before = s.params.clone();
    s.adam_step(&Gradients(vec![0.0; before.len()]), 0.1).unwrap();
    assert_eq!(s.step, 1);
    assert!(s.adam_m.iter().all(|&m| (m - 0.45).abs() < 1e-15));
    assert!(s.adam_v.iter().all(|&v| (v - 0.25 * 0.999).abs() < 1e-15));

    // fresh moments, zero gradient: parameters stay put
    let mut s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    s.adam_step(&Gradients(vec![0.0; before.len()]), 0.1).unwrap();
    assert_eq!(s.params, before);

    // first step with gradient g moves by lr * g / (|g| + eps)
    let mut s = init(&toy_config(vec![3], 0.5), 1).unwrap();
    let g: Vec<f64> = (0..before.len()).map(|i| (i as f64 - 10.0) * 0.37).collect();
    s.adam_step(&Gradients(g.clone()), 0.01).unwrap();
    for ((p, q), gi) in s.params.iter().zip(&before).zip(&g) {
        let expected = -0.01 * gi / (gi.abs() + 1e-8);
        assert!((p - q - expected).abs() < 1e-12);
    }
}

#[test]
fn adam_trajectories_are_reproducible() {
    let run = || {
        let mut s = init(&toy_config(vec![4, 2], 0.5), 6).unwrap();
        let x = random_batch(8, 7, 7);
        let y = vec![1.0; 8];
        let mut rng = seed::rng(8);
        for _ in 0..5 {
            let c = s.forward_train(&x, &mut rng).unwrap();
            let g = s.backward(&c, &y).unwrap();
            s.absorb_batch_stats(&c);
            s.adam_step(&g, 0.01).unwrap();
        }
        s
    };
    assert_eq!(run(), run());
}

fn linear_data(n: usize, seed_value: u64) -> (Matrix, Vec<f64>) {
    let x = random_batch(n, 7, seed_value);
    let y = (0..n).map(|r| x.row(r).iter().sum()).collect();
    (x, y)
}

#[test]
fn learns_a_linear_target() {
    let (xt, yt) = linear_data(96, 1);
    let (xv, yv) = linear_data(32, 2);
    let cfg = MlpConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 200,
        patience: 200,
        ..toy_config(vec![32, 16], 0.0)
    };
    let untrained = init(&cfg, cfg.seed).unwrap();
    let initial = train::mse(&untrained.forward_infer(&xv).unwrap(), &yv);
    let (_, report) = train_matrices(&cfg, &xt, &yt, &xv, &yv).unwrap();
    assert!(
        report.best_val_loss < 0.01 * initial,
        "{} vs {initial}",
        report.best_val_loss
    );
}

#[test]
fn early_stopping_returns_best_snapshot() {
    let (xt, yt) = linear_data(40, 3);
    let (xv, yv) = linear_data(20, 4);
    let cfg = MlpConfig {
        max_epochs: 120,
        patience: 10,
        ..toy_config(vec![8], 0.5)
    };
    let (state, report) = train_matrices(&cfg, &xt, &yt, &xv, &yv).unwrap();
    let min = report.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_loss, min);
    assert_eq!(train::mse(&state.forward_infer(&xv).unwrap(), &yv), min);
    assert_eq!(report.val_loss[report.best_epoch], min);
    assert!(report.epochs_run <= cfg.max_epochs);
    assert_eq!(report.epochs_run, report.val_loss.len());
}

#[test]
fn zero_patience_stops_at_first_plateau() {
    let (xt, yt) = linear_data(40, 3);
    let (xv, yv) = linear_data(20, 4);
    let cfg = MlpConfig {
        patience: 0,
        ..toy_config(vec![8], 0.5)
    };
    let (_, report) = train_matrices(&cfg, &xt, &yt, &xv, &yv).unwrap();
    assert!(report.best_epoch < report.epochs_run);
    let n = report.epochs_run;
    if n < cfg.max_epochs {
        // every epoch but the last improved
        assert!(report.val_loss[n - 1] >= report.best_val_loss);
        assert_eq!(report.best_epoch, n - 2);
    }
}

#[test]
fn training_is_deterministic() {
    let (xt, yt) = linear_data(30, 5);
    let (xv, yv) = linear_data(10, 6);
    let cfg = toy_config(vec![6, 4], 0.5);
    let a = train_matrices(&cfg, &xt, &yt, &xv, &yv).unwrap();
    let b = train_matrices(&cfg, &xt, &yt, &xv, &yv).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn training_input_errors() {
    let (xt, yt) = linear_data(30, 5);
    let empty = Matrix::zeros(0, 7);
    let cfg = toy_config(vec![4], 0.5);
    assert!(train_matrices(&cfg, &empty, &[], &xt, &yt).is_err());
    assert!(train_matrices(&cfg, &xt, &yt, &empty, &[]).is_err());
    let d = crate::dataset::Dataset::new(vec![]);
    assert!(matches!(train(&cfg, &d, &d), Err(Error::NotNormalized)));
}

#[test]
fn memorizes_noise_free_training_data() {
    use crate::dataset::{apply_normalizer, fit_normalizer, synth_generate, SynthConfig};
    let cfg = SynthConfig {
        n_experiments: 25,
        noise_scale: 0.0,
        ..SynthConfig::default()
    };
    let raw = synth_generate(&cfg, 4).unwrap();
    let d = apply_normalizer(&fit_normalizer(&raw).unwrap(), &raw).unwrap();
    let mlp = MlpConfig {
        hidden_sizes: vec![64, 64],
        learning_rate: 3e-3,
        batch_size: 25,
        dropout_p: 0.0,
        max_epochs: 3000,
        patience: 300,
        seed: 1,
        ..MlpConfig::default()
    };
    let (state, _) = train(&mlp, &d, &d).unwrap();
    let est = predict(&state, &d);
    assert_eq!(est.len(), d.len());
    assert_eq!(est, predict(&state, &d));
    let mae: f64 = est
        .iter()
        .zip(d.targets())
        .map(|(e, m)| (e - m).abs())
        .sum::<f64>()
        / d.len() as f64;
    assert!(mae < 1.0, "training MAE {mae}");
}

#[test]
fn state_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = init(&toy_config(vec![5, 3], 0.5), 2).unwrap();
    let x = random_batch(6, 7, 1);
    let c = s.forward_train(&x, &mut seed::rng(0)).unwrap();
    let g = s.backward(&c, &[0.0; 6]).unwrap();
    s.absorb_batch_stats(&c);
    s.adam_step(&g, 0.01).unwrap();
    let stem = dir.path().join("model");
    save_state(&s, &stem).unwrap();
    let back = load_state(&stem).unwrap();
    assert_eq!(back, s);
    let blob = std::fs::read(stem.with_extension("bin")).unwrap();
    let stats: usize = s.running_mean.iter().map(Vec::len).sum();
    assert_eq!(blob.len(), 8 * (3 * s.params.len() + 2 * stats));
    assert_eq!(&blob[..8], &s.params[0].to_le_bytes());
}
