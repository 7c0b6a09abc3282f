//! Command implementations. Every command that writes files echoes the
//! effective configuration and toolkit version into its output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use drycurve::baselines::{pls_fit, rfr_fit};
use drycurve::dataset::{apply_normalizer, fit_normalizer, synth_generate, Dataset, FEATURE_NAMES};
use drycurve::evaluation::{evaluate_ranges, repeated_cv, rolling_mae, write_table_csv, AxisKind, CvReport, Metrics, Regime};
use drycurve::hpo::{depth_sweep, write_transcript};
use drycurve::mlp::{self, save_state};
use drycurve::models::{build_model, train_val_split, FittedModel};
use drycurve::thinlayer::fit_multistart;
use drycurve::{Exec, VERSION};
use serde::Serialize;

use crate::config::{BaselineKind, Echo, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub seed: u64,
    pub exec: Exec,
    pub out: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("drycurve-out"));
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

pub fn set_input(cfg: &mut RunConfig, input: Option<PathBuf>) {
    if input.is_some() {
        cfg.input = input;
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn echo(cfg: &RunConfig, command: &str, dir: &Path) -> Result<(), CliError> {
    write_json(
        &dir.join("run_config.json"),
        &Echo {
            toolkit: "drycurve",
            version: VERSION,
            command,
            config: cfg,
        },
    )
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Dataset::load_csv(cfg.input()?).map_err(CliError::input)
}

/// The training rows for a regime: everything for WIC, ECD only for NIC.
fn regime_rows(d: &Dataset, regime: Regime) -> Result<Dataset, CliError> {
    let rows = match regime {
        Regime::Wic => d.clone(),
        Regime::Nic => d.filter(|s| s.is_ecd()),
    };
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("no training samples for regime {regime}")));
    }
    Ok(rows)
}

fn write_predictions(path: &Path, d: &Dataset, measured: &[f64], estimates: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["experiment_id", "class", "drying_time", "measured", "estimate"])?;
    for ((s, m), e) in d.iter().zip(measured).zip(estimates) {
        let class = if s.is_ecd() { "ECD" } else { "ICD" };
        w.write_record([
            s.experiment_id.as_str(),
            class,
            &s.features.drying_time().to_string(),
            &m.to_string(),
            &e.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RangeMetrics {
    all: Metrics,
    ecd: Option<Metrics>,
}

fn range_metrics(estimates: &[f64], d: &Dataset) -> Result<RangeMetrics, CliError> {
    Ok(match evaluate_ranges(estimates, d) {
        Ok((all, ecd)) => RangeMetrics { all, ecd: Some(ecd) },
        Err(drycurve::Error::NoEcdSamples) => RangeMetrics {
            all: drycurve::evaluation::compute_metrics(estimates, &d.targets())?,
            ecd: None,
        },
        Err(e) => return Err(e.into()),
    })
}

#[derive(Serialize)]
struct FeatureRange {
    name: &'static str,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct ValidationReport {
    samples: usize,
    icd: usize,
    ecd: usize,
    ranges: Vec<FeatureRange>,
}

pub fn validate(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let d = load(cfg)?;
    let mut ranges = Vec::new();
    if !d.is_empty() {
        let rows = d.feature_rows();
        for (j, &name) in FEATURE_NAMES.iter().enumerate() {
            let col = rows.iter().map(|r| r[j]);
            ranges.push(FeatureRange {
                name,
                min: col.clone().fold(f64::INFINITY, f64::min),
                max: col.fold(f64::NEG_INFINITY, f64::max),
            });
        }
        let mc = d.targets();
        ranges.push(FeatureRange {
            name: "mc",
            min: mc.iter().copied().fold(f64::INFINITY, f64::min),
            max: mc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let report = ValidationReport {
        samples: d.len(),
        icd: d.len() - d.iter().filter(|s| s.is_ecd()).count(),
        ecd: d.iter().filter(|s| s.is_ecd()).count(),
        ranges,
    };
    println!("{} samples, {} ICD, {} ECD", report.samples, report.icd, report.ecd);
    for r in &report.ranges {
        println!("  {:<24} {} .. {}", r.name, r.min, r.max);
    }
    if ctx.out.is_some() {
        let dir = ctx.out_dir()?;
        write_json(&dir.join("validation.json"), &report)?;
        echo(cfg, "validate", &dir)?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let d = synth_generate(&cfg.synth, ctx.seed).map_err(CliError::input)?;
    let dir = ctx.out_dir()?;
    let path = dir.join("synth.csv");
    d.write_csv(create(&path)?)?;
    echo(cfg, "synth", &dir)?;
    println!("wrote {} samples to {}", d.len(), path.display());
    Ok(())
}

pub fn fit_thinlayer(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let d = regime_rows(&load(cfg)?, cfg.regime)?;
    let scale: Box<dyn Fn(f64) -> f64> = if cfg.normalize_target {
        let norm = fit_normalizer(&d)?;
        Box::new(move |mc| norm.normalize_target(mc))
    } else {
        Box::new(|mc| mc)
    };
    let times = d.drying_times();
    let measured: Vec<f64> = d.iter().map(|s| scale(s.mc)).collect();
    let ratios: Vec<f64> = measured.iter().map(|m| m / 100.0).collect();
    let fit = fit_multistart(cfg.family, &times, &ratios, &cfg.model_options.thinlayer, ctx.exec)?;
    let estimates: Vec<f64> = times.iter().map(|&t| 100.0 * fit.predict_ratio(t)).collect();

    let dir = ctx.out_dir()?;
    write_json(&dir.join("fit.json"), &fit)?;
    write_predictions(&dir.join("predictions.csv"), &d, &measured, &estimates)?;
    echo(cfg, "fit-thinlayer", &dir)?;
    let params: Vec<String> = cfg
        .family
        .param_names()
        .iter()
        .zip(&fit.params)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    println!(
        "{}: {} sse={} iterations={} converged={}",
        cfg.family.display_name(),
        params.join(" "),
        fit.sse,
        fit.iterations,
        fit.converged
    );
    Ok(())
}

pub fn train_ann(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.model_options.mlp.validate().map_err(CliError::input)?;
    let all = load(cfg)?;
    let raw = regime_rows(&all, cfg.regime)?;
    let norm = fit_normalizer(&raw)?;
    let train_all = apply_normalizer(&norm, &raw)?;
    let (tr, va) = train_val_split(train_all.len(), cfg.val_fraction, ctx.seed)?;
    let config = mlp::MlpConfig {
        seed: ctx.seed,
        ..cfg.model_options.mlp.clone()
    };
    let (state, report) = mlp::train(&config, &train_all.subset(&tr), &train_all.subset(&va))?;

    let dir = ctx.out_dir()?;
    save_state(&state, dir.join("model"))?;
    write_json(&dir.join("normalizer.json"), &norm)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("loss.csv"))?);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (e, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        w.write_record([e.to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    write_json(&dir.join("train_report.json"), &report)?;

    let full = apply_normalizer(&norm, &all)?;
    let estimates = mlp::predict(&state, &full);
    write_predictions(&dir.join("predictions.csv"), &full, &full.targets(), &estimates)?;
    write_json(&dir.join("metrics.json"), &range_metrics(&estimates, &full)?)?;
    echo(cfg, "train-ann", &dir)?;
    println!(
        "trained {:?} for {} epochs, best validation MSE {} at epoch {}",
        config.hidden_sizes, report.epochs_run, report.best_val_loss, report.best_epoch
    );
    Ok(())
}

pub fn train_baseline(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let all = load(cfg)?;
    let raw = regime_rows(&all, cfg.regime)?;
    let norm = fit_normalizer(&raw)?;
    let train = apply_normalizer(&norm, &raw)?;
    let (x, y) = (train.feature_rows(), train.targets());
    let dir = ctx.out_dir()?;
    let model: Box<dyn FittedModel> = match cfg.baseline {
        BaselineKind::Pls => {
            let m = pls_fit(&x, &y, cfg.model_options.pls_components.unwrap_or(5))?;
            write_json(&dir.join("model.json"), &m)?;
            Box::new(m)
        }
        BaselineKind::Rfr => {
            let m = rfr_fit(&x, &y, cfg.model_options.forest, ctx.seed, ctx.exec)?;
            write_json(&dir.join("model.json"), &m)?;
            Box::new(m)
        }
    };
    write_json(&dir.join("normalizer.json"), &norm)?;
    let full = apply_normalizer(&norm, &all)?;
    let estimates = model.predict(&full)?;
    write_predictions(&dir.join("predictions.csv"), &full, &full.targets(), &estimates)?;
    let metrics = range_metrics(&estimates, &full)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    echo(cfg, "train-baseline", &dir)?;
    println!("{:?} in-sample MAE {}", cfg.baseline, metrics.all.mae);
    Ok(())
}

fn rolling_files(report: &CvReport, d: &Dataset, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut est = Vec::new();
    let mut meas = Vec::new();
    let mut times = Vec::new();
    for c in &report.cells {
        est.extend_from_slice(&c.estimates);
        meas.extend_from_slice(&c.measured);
        times.extend(c.held_out.iter().map(|&i| d.samples()[i].features.drying_time()));
    }
    let stem = format!("{}_{}", report.model, report.regime.to_string().to_lowercase());
    let by_time = rolling_mae(&est, &meas, &times, cfg.rolling.drying_time_half_width, AxisKind::DryingTime)?;
    by_time.write_csv(create(&dir.join(format!("{stem}_drying_time.csv")))?)?;
    let by_est = rolling_mae(&est, &meas, &est, cfg.rolling.estimate_half_width, AxisKind::Estimate)?;
    by_est.write_csv(create(&dir.join(format!("{stem}_estimate.csv")))?)?;
    Ok(())
}

pub fn benchmark(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let d = load(cfg)?;
    if cfg.models.is_empty() || cfg.regimes.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one model and one regime".into()));
    }
    cfg.cv.validate(d.len()).map_err(CliError::input)?;
    cfg.model_options.mlp.validate().map_err(CliError::input)?;
    let mut reports = Vec::new();
    for &kind in &cfg.models {
        let model = build_model(kind, &cfg.model_options);
        for &regime in &cfg.regimes {
            let cv = drycurve::evaluation::CvConfig {
                seed: ctx.seed,
                regime,
                ..cfg.cv
            };
            log::info!("cross-validating {kind} ({regime})");
            let report = repeated_cv(model.as_ref(), &d, &cv, ctx.exec)
                .map_err(|e| CliError::Runtime(format!("{kind} {regime}: {e}")))?;
            reports.push(report);
        }
    }
    let dir = ctx.out_dir()?;
    write_table_csv(&reports, create(&dir.join("table.csv"))?)?;
    write_json(&dir.join("folds.json"), &reports)?;
    let rolling = dir.join("rolling");
    fs::create_dir_all(&rolling)?;
    for r in &reports {
        rolling_files(r, &d, cfg, &rolling)?;
    }
    echo(cfg, "benchmark", &dir)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<12} {:<4} {:>10} {:>10} {:>10}", "model", "reg", "MAE all", "MAE ECD", "R2 all")?;
    for r in &reports {
        let flag = if r.converged { "" } else { " (not converged)" };
        let ecd = r.ecd.map_or("-".to_string(), |s| format!("{:.3}", s.mean.mae));
        writeln!(
            out,
            "{:<12} {:<4} {:>10.3} {:>10} {:>10.4}{flag}",
            r.model, r.regime, r.all.mean.mae, ecd, r.all.mean.r2
        )?;
    }
    Ok(())
}

pub fn hpo(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.asha.validate().map_err(CliError::input)?;
    cfg.space.validate().map_err(CliError::input)?;
    let d = load(cfg)?;
    let sweep = depth_sweep(&cfg.space, &d, &cfg.asha, ctx.seed, ctx.exec)?;

    let dir = ctx.out_dir()?;
    let transcripts = dir.join("transcripts");
    fs::create_dir_all(&transcripts)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("depth_scores.csv"))?);
    w.write_record(["depth", "best_cv_mse", "best_trial", "fold_trainings"])?;
    for r in &sweep {
        w.write_record([
            r.depth.to_string(),
            r.best_score.to_string(),
            r.outcome.best_trial.to_string(),
            r.outcome.budget_used.to_string(),
        ])?;
        write_transcript(&r.outcome.events, create(&transcripts.join(format!("depth_{}.jsonl", r.depth)))?)?;
    }
    w.flush()?;
    let best = sweep
        .iter()
        .min_by(|a, b| a.best_score.total_cmp(&b.best_score).then(a.depth.cmp(&b.depth)))
        .expect("space has at least one depth");
    write_json(&dir.join("best_config.json"), &best.best_config)?;
    echo(cfg, "hpo", &dir)?;
    for r in &sweep {
        println!("depth {}: best inner-CV MSE {}", r.depth, r.best_score);
    }
    println!(
        "best: depth {} {:?} lr {} batch {}",
        best.depth, best.best_config.hidden_sizes, best.best_config.learning_rate, best.best_config.batch_size
    );
    Ok(())
}
