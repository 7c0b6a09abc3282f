use super::*;
use crate::dataset::{synth_generate, SynthConfig};
use crate::models::MeanModel;

fn synth(n: usize) -> Dataset {
    synth_generate(&SynthConfig { n_experiments: n, ..Default::default() }, 12).unwrap()
}

#[test]
fn sampled_configs_stay_in_the_space() {
    let space = SearchSpace::default();
    let mut rng = seed::rng(1);
    let mut low_decade = 0;
    let n = 100_000;
    for i in 0..n {
        let depth = 1 + i % 7;
        let c = sample_config(&space, depth, &mut rng).unwrap();
        assert_eq!(c.hidden_sizes.len(), depth);
        assert!(space.contains(&c));
        assert!(c.validate().is_ok());
        if c.learning_rate < 1e-3 {
            low_decade += 1;
        }
    }
    let frac = low_decade as f64 / n as f64;
    assert!((frac - 1.0 / 3.0).abs() < 0.02, "{frac}");
    assert_eq!(
        sample_config(&space, 3, &mut seed::rng(9)).unwrap(),
        sample_config(&space, 3, &mut seed::rng(9)).unwrap()
    );
    assert!(sample_config(&space, 0, &mut rng).is_err());
}

#[test]
fn rungs_and_validation() {
    let cfg = AshaConfig::default();
    assert_eq!(cfg.rung_resources(), [3, 9, 10]);
    assert_eq!(AshaConfig { grace_period: 1, ..cfg }.rung_resources(), [1, 3, 9, 10]);
    assert_eq!(AshaConfig { grace_period: 12, ..cfg }.rung_resources(), [10]);
    assert_eq!(AshaConfig { inner_passes: 3, ..cfg }.rung_resources(), [3, 9, 27, 30]);
    for bad in [
        AshaConfig { trials_per_depth: 0, ..cfg },
        AshaConfig { reduction_factor: 1, ..cfg },
        AshaConfig { grace_period: 0, ..cfg },
        AshaConfig { brackets: 2, ..cfg },
        AshaConfig { workers: 0, ..cfg },
    ] {
        assert!(bad.validate().is_err());
    }
}

/// Deterministic objective: a bowl in `x` plus a small fold-dependent wobble.
fn bowl(x: &f64, _trial: usize, unit: usize) -> Result<f64> {
    Ok((x - 0.37).powi(2) + 0.002 * ((unit as f64 + 1.0) * 7.3 * x).sin())
}

fn pool(n: usize, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn full_score(x: f64, r: usize) -> f64 {
    (0..r).map(|u| bowl(&x, 0, u).unwrap()).sum::<f64>() / r as f64
}

#[test]
fn synchronous_halving_counts() {
    let cfg = AshaConfig { trials_per_depth: 27, ..Default::default() };
    let out = asha_run(pool(27, 1), &cfg, Exec::Serial, bowl).unwrap();
    assert_eq!(out.rung_counts, [27, 9, 3]);
    assert_eq!(out.budget_used, 27 * 3 + 9 * 6 + 3);
    assert!(out.budget_used <= out.budget_ceiling);
    let completed = out.trials.iter().filter(|t| t.status == TrialStatus::Completed).count();
    assert_eq!(completed, 3);
    assert!(out.trials.iter().all(|t| t.resource_consumed <= 10));
}

fn check_promotion_rule(events: &[Event], cfg: &AshaConfig) {
    let res = cfg.rung_resources();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); res.len()];
    for e in events {
        match e {
            Event::Start { .. } => scores.push(Vec::new()),
            Event::FoldScore { trial, score, .. } => {
                scores[*trial].push(*score);
                if let Some(r) = res.iter().position(|&r| r == scores[*trial].len()) {
                    members[r].push(*trial);
                }
            }
            Event::Promote { trial, from_rung, to_rung } => {
                assert_eq!(*to_rung, from_rung + 1);
                let r = res[*from_rung];
                let at = |t: usize| scores[t][..r].iter().sum::<f64>() / r as f64;
                let mut ranked: Vec<f64> = members[*from_rung].iter().map(|&t| at(t)).collect();
                ranked.sort_by(f64::total_cmp);
                let q = ranked.len().div_ceil(cfg.reduction_factor);
                assert!(at(*trial) <= ranked[q - 1]);
            }
            _ => {}
        }
    }
}

#[test]
fn promotions_respect_the_quota() {
    for workers in [1, 2, 5] {
        let cfg = AshaConfig { trials_per_depth: 60, workers, ..Default::default() };
        let out = asha_run(pool(60, 2), &cfg, Exec::Serial, bowl).unwrap();
        check_promotion_rule(&out.events, &cfg);
        assert!(out.budget_used <= out.budget_ceiling);
        for t in &out.trials {
            assert!(t.resource_consumed <= 10);
            let replayed: f64 = t.fold_scores.iter().sum::<f64>() / t.fold_scores.len() as f64;
            assert_eq!(t.running_score, Some(replayed));
        }
    }
}

#[test]
fn best_config_is_near_the_top_of_the_pool() {
    let configs = pool(300, 3);
    let cfg = AshaConfig { trials_per_depth: 300, ..Default::default() };
    let out = asha_run(configs.clone(), &cfg, Exec::Serial, bowl).unwrap();
    let mut exhaustive: Vec<f64> = configs.iter().map(|&x| full_score(x, 10)).collect();
    exhaustive.sort_by(f64::total_cmp);
    assert!(out.best_score <= exhaustive[2], "{} vs {:?}", out.best_score, &exhaustive[..3]);
    assert_eq!(out.best_score, full_score(out.best_config, 10));
}

#[test]
fn single_trial_runs_to_completion() {
    let cfg = AshaConfig { trials_per_depth: 1, ..Default::default() };
    let out = asha_run(vec![0.5], &cfg, Exec::Serial, bowl).unwrap();
    assert_eq!(out.trials[0].resource_consumed, 10);
    assert_eq!(out.trials[0].status, TrialStatus::Completed);
    assert_eq!(out.best_trial, 0);
    assert!(asha_run(Vec::<f64>::new(), &cfg, Exec::Serial, bowl).is_err());
}

#[test]
fn asynchronous_mode_is_deterministic() {
    let cfg = AshaConfig { trials_per_depth: 40, workers: 4, ..Default::default() };
    let a = asha_run(pool(40, 4), &cfg, Exec::Serial, bowl).unwrap();
    let b = asha_run(pool(40, 4), &cfg, Exec::Parallel, bowl).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transcript_replays_itself() {
    for workers in [1, 3] {
        let cfg = AshaConfig { trials_per_depth: 30, workers, ..Default::default() };
        let out = asha_run(pool(30, 5), &cfg, Exec::Serial, bowl).unwrap();
        let mut buf = Vec::new();
        write_transcript(&out.events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), out.events.len());
        assert!(text.lines().next().unwrap().starts_with(r#"{"event":"start","trial":0"#));
        let events = read_transcript(buf.as_slice()).unwrap();
        assert_eq!(events, out.events);
        assert_eq!(replay(&events, &cfg).unwrap(), out.events);
        let truncated: Vec<Event> = events.iter().filter(|e| !matches!(e, Event::FoldScore { trial: 0, .. })).cloned().collect();
        assert!(replay(&truncated, &cfg).is_err());
    }
}

#[test]
fn trial_evaluation_matches_full_cv_and_resumes() {
    let d = synth(25);
    let folds = InnerFolds::new(d.len(), 10, 1, 3).unwrap();
    let mut t = TrialResult::new(0, ());
    evaluate_trial(&MeanModel, &d, &folds, 0, 1, &mut t).unwrap();
    assert_eq!((t.status, t.running_score, t.resource_consumed), (TrialStatus::Running, None, 0));
    evaluate_trial(&MeanModel, &d, &folds, 10, 1, &mut t).unwrap();

    let y = d.targets();
    let mut fold_mse = Vec::new();
    for held in &folds.passes[0] {
        let train: Vec<f64> = (0..y.len()).filter(|i| !held.contains(i)).map(|i| y[i]).collect();
        let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = |v: f64| (v - lo) / (hi - lo) * 100.0;
        let est = z(train.iter().sum::<f64>() / train.len() as f64);
        fold_mse.push(held.iter().map(|&i| (z(y[i]) - est).powi(2)).sum::<f64>() / held.len() as f64);
    }
    let oracle = fold_mse.iter().sum::<f64>() / 10.0;
    assert!((t.running_score.unwrap() - oracle).abs() < 1e-9 * oracle);

    let mut resumed = TrialResult::new(0, ());
    evaluate_trial(&MeanModel, &d, &folds, 3, 1, &mut resumed).unwrap();
    evaluate_trial(&MeanModel, &d, &folds, 10, 1, &mut resumed).unwrap();
    assert_eq!(resumed, t);
    assert!(evaluate_trial(&MeanModel, &d, &folds, 11, 1, &mut resumed).is_err());
}

fn tiny_space() -> SearchSpace {
    SearchSpace {
        neurons: (2, 12),
        depths: vec![1, 2],
        template: MlpConfig { max_epochs: 4, patience: 2, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn depth_sweep_bookkeeping() {
    let d = synth(20);
    let cfg = AshaConfig { trials_per_depth: 1, ..Default::default() };
    let a = depth_sweep(&tiny_space(), &d, &cfg, 7, Exec::Parallel).unwrap();
    assert_eq!(a.iter().map(|r| r.depth).collect::<Vec<_>>(), [1, 2]);
    for r in &a {
        assert_eq!(r.best_config.hidden_sizes.len(), r.depth);
        assert!(tiny_space().contains(&r.best_config));
        assert_eq!(r.outcome.trials.len(), 1);
    }
    let b = depth_sweep(&tiny_space(), &d, &cfg, 7, Exec::Serial).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn search_input_errors() {
    let d = synth(10);
    let cfg = AshaConfig { trials_per_depth: 0, ..Default::default() };
    assert!(asha_search(&tiny_space(), 1, &d, &cfg, 0, Exec::Serial).is_err());
    let norm = fit_normalizer(&d).unwrap();
    let nd = apply_normalizer(&norm, &d).unwrap();
    let cfg = AshaConfig { trials_per_depth: 1, ..Default::default() };
    assert!(matches!(asha_search(&tiny_space(), 1, &nd, &cfg, 0, Exec::Serial), Err(Error::AlreadyNormalized)));
}
