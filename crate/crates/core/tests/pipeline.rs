use drycurve::dataset::{apply_normalizer, fit_normalizer, synth_generate, Dataset, NormalizationSpec, SynthConfig};
use drycurve::evaluation::{repeated_cv, CvConfig, Regime};
use drycurve::mlp::MlpConfig;
use drycurve::models::{build_model, ModelKind, ModelOptions};
use drycurve::thinlayer::{fit_dataset, FitOptions, ThinLayerFamily};
use drycurve::Exec;

fn small_options() -> ModelOptions {
    let mut opts = ModelOptions {
        mlp: MlpConfig { hidden_sizes: vec![6], max_epochs: 5, patience: 2, ..Default::default() },
        ..Default::default()
    };
    opts.forest.n_trees = 5;
    opts
}

#[test]
fn csv_round_trip_preserves_every_value() {
    let d = synth_generate(&SynthConfig { n_experiments: 30, ..Default::default() }, 4).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = Dataset::from_csv_reader(buf.as_slice(), "mem.csv").unwrap();
    assert_eq!(back, d);
}

#[test]
fn normalizer_maps_training_rows_onto_percent_scale() {
    let d = synth_generate(&SynthConfig { n_experiments: 25, ..Default::default() }, 8).unwrap();
    let spec = fit_normalizer(&d).unwrap();
    let z = apply_normalizer(&spec, &d).unwrap();
    assert!(z.is_normalized());
    for (s, raw) in z.iter().zip(d.iter()) {
        assert!(s.features.0.iter().all(|v| (0.0..=100.0).contains(v)));
        assert!((0.0..=100.0).contains(&s.mc));
        assert!((spec.denormalize_target(s.mc) - raw.mc).abs() < 1e-9);
    }
    let json = serde_json::to_string(&spec).unwrap();
    let back: NormalizationSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
}

#[test]
fn noise_free_synthetic_curve_is_recovered() {
    let cfg = SynthConfig {
        n_experiments: 40,
        family: ThinLayerFamily::Page,
        params: vec![0.02, 1.3],
        noise_scale: 0.0,
        initial_mc: (100.0, 100.0),
        feature_coupling: 0.0,
        ..Default::default()
    };
    let d = synth_generate(&cfg, 12).unwrap();
    let fit = fit_dataset(ThinLayerFamily::Page, &d, &FitOptions::default(), Exec::Serial).unwrap();
    assert!((fit.params[0] - 0.02).abs() < 1e-6 * 0.02, "{:?}", fit.params);
    assert!((fit.params[1] - 1.3).abs() < 1e-6 * 1.3, "{:?}", fit.params);
}

#[test]
fn every_benchmark_model_runs_through_cross_validation() {
    let d = synth_generate(&SynthConfig { n_experiments: 15, ..Default::default() }, 21).unwrap();
    let opts = small_options();
    for kind in ModelKind::benchmark_set() {
        for regime in [Regime::Wic, Regime::Nic] {
            let cfg = CvConfig { k: 3, repeats: 2, seed: 5, regime };
            let model = build_model(kind, &opts);
            let a = repeated_cv(model.as_ref(), &d, &cfg, Exec::Serial).unwrap();
            let b = repeated_cv(model.as_ref(), &d, &cfg, Exec::Serial).unwrap();
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{} {regime}", kind.key());
            assert_eq!(a.cells.len(), 6);
            assert_eq!(a.folds.len(), 2);
            for r in 0..2 {
                let oof = a.out_of_fold(r);
                assert_eq!(oof.len(), d.len());
                assert!(oof.iter().all(|v| v.is_finite()));
            }
        }
    }
}
