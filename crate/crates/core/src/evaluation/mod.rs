//! Error metrics, repeated k-fold cross-validation with WIC/NIC regimes,
//! dual-range reporting and rolling-window MAE curves.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_normalizer, fit_normalizer, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::ModelSpec;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub std_abs_resid: f64,
    pub r2: f64,
}

impl Metrics {
    fn map2(a: &[Metrics], f: impl Fn(&[f64]) -> f64) -> Metrics {
        let col = |g: fn(&Metrics) -> f64| f(&a.iter().map(g).collect::<Vec<_>>());
        Metrics {
            mae: col(|m| m.mae),
            mse: col(|m| m.mse),
            std_abs_resid: col(|m| m.std_abs_resid),
            r2: col(|m| m.r2),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// MSE, MAE, the sample SD of absolute residuals and R² = 1 − SS_res/SS_tot.
/// A constant target gives R² = 1 for a perfect fit and −∞ otherwise.
pub fn compute_metrics(estimates: &[f64], measured: &[f64]) -> Result<Metrics> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    if estimates.len() != measured.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} measurements",
            estimates.len(),
            measured.len()
        )));
    }
    let abs: Vec<f64> = estimates.iter().zip(measured).map(|(e, m)| (m - e).abs()).collect();
    let ss_res: f64 = abs.iter().map(|a| a * a).sum();
    let y_bar = mean(measured);
    let ss_tot: f64 = measured.iter().map(|m| (m - y_bar) * (m - y_bar)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(Metrics {
        mae: mean(&abs),
        mse: ss_res / abs.len() as f64,
        std_abs_resid: sample_sd(&abs),
        r2,
    })
}

/// Metrics over all samples and over the ECD samples only.
pub fn evaluate_ranges(estimates: &[f64], d: &Dataset) -> Result<(Metrics, Metrics)> {
    let all = compute_metrics(estimates, &d.targets())?;
    let ecd = ecd_metrics(estimates, d)?.ok_or(Error::NoEcdSamples)?;
    Ok((all, ecd))
}

fn ecd_metrics(estimates: &[f64], d: &Dataset) -> Result<Option<Metrics>> {
    if estimates.len() != d.len() {
        return Err(Error::Shape(format!("{} estimates for {} samples", estimates.len(), d.len())));
    }
    let (e, m): (Vec<f64>, Vec<f64>) = estimates
        .iter()
        .zip(d.iter())
        .filter(|(_, s)| s.is_ecd())
        .map(|(e, s)| (*e, s.mc))
        .unzip();
    if e.is_empty() {
        Ok(None)
    } else {
        compute_metrics(&e, &m).map(Some)
    }
}

/// Random partition of `0..n` into `k` folds. The first `n % k` folds hold one
/// extra index; indices within a fold are ascending.
pub fn kfold_split(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// With or without initial-condition samples in the training portions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Regime {
    #[default]
    #[serde(rename = "WIC", alias = "wic")]
    Wic,
    #[serde(rename = "NIC", alias = "nic")]
    Nic,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Wic => "WIC",
            Regime::Nic => "NIC",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WIC" => Ok(Regime::Wic),
            "NIC" => Ok(Regime::Nic),
            _ => Err(Error::InvalidArgument(format!("unknown regime '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            repeats: 5,
            seed: 0,
            regime: Regime::Wic,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if self.k < 2 || self.k > n {
            return Err(Error::InvalidArgument(format!(
                "k = {} needs 2 ≤ k ≤ {n}",
                self.k
            )));
        }
        Ok(())
    }
}

/// One held-out fold of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub n_train: usize,
    pub converged: bool,
    pub all: Metrics,
    pub ecd: Option<Metrics>,
    /// Held-out dataset indices with their estimates and measured values on
    /// the fold's normalized scale.
    pub held_out: Vec<usize>,
    pub estimates: Vec<f64>,
    pub measured: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Metrics,
    pub sd: Metrics,
    /// Repeats that contributed (those with at least one scored fold).
    pub repeats: usize,
}

fn summarize(per_repeat: &[Metrics]) -> Option<Summary> {
    if per_repeat.is_empty() {
        return None;
    }
    Some(Summary {
        mean: Metrics::map2(per_repeat, mean),
        sd: Metrics::map2(per_repeat, sample_sd),
        repeats: per_repeat.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub regime: Regime,
    pub config: CvConfig,
    pub n_samples: usize,
    /// Folds that all converged (thin-layer fits can hit the iteration cap).
    pub converged: bool,
    pub all: Summary,
    pub ecd: Option<Summary>,
    /// Fold-averaged metrics per repeat.
    pub repeat_all: Vec<Metrics>,
    pub repeat_ecd: Vec<Option<Metrics>>,
    /// `folds[r][f]` lists the indices held out in fold `f` of repeat `r`.
    pub folds: Vec<Vec<Vec<usize>>>,
    pub cells: Vec<FoldResult>,
}

impl CvReport {
    /// Held-out estimates of repeat `r`, ordered by dataset index.
    pub fn out_of_fold(&self, r: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.n_samples];
        for c in self.cells.iter().filter(|c| c.repeat == r) {
            for (&i, &e) in c.held_out.iter().zip(&c.estimates) {
                out[i] = e;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Repeated k-fold CV of `model` on the raw dataset `d`. Every cell fits the
/// normalizer on its own training portion; NIC drops ICD samples from the
/// training portion only.
pub fn repeated_cv(model: &dyn ModelSpec, d: &Dataset, cfg: &CvConfig, exec: Exec) -> Result<CvReport> {
    if d.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    cfg.validate(d.len())?;
    let folds: Vec<Vec<Vec<usize>>> = (0..cfg.repeats)
        .map(|r| kfold_split(d.len(), cfg.k, &mut seed::rng_at(cfg.seed, &[r as u64])))
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.k).map(move |f| (r, f)))
        .collect();
    let results = exec.map(&cells, |_, &(r, f)| {
        run_cell(model, d, &folds[r], r, f, cfg)
    });
    let cells: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;

    let mut repeat_all = Vec::with_capacity(cfg.repeats);
    let mut repeat_ecd = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let rc: Vec<&FoldResult> = cells.iter().filter(|c| c.repeat == r).collect();
        let all: Vec<Metrics> = rc.iter().map(|c| c.all).collect();
        repeat_all.push(Metrics::map2(&all, mean));
        let ecd: Vec<Metrics> = rc.iter().filter_map(|c| c.ecd).collect();
        repeat_ecd.push((!ecd.is_empty()).then(|| Metrics::map2(&ecd, mean)));
    }
    let ecd_present: Vec<Metrics> = repeat_ecd.iter().flatten().copied().collect();
    Ok(CvReport {
        model: model.name(),
        regime: cfg.regime,
        config: *cfg,
        n_samples: d.len(),
        converged: cells.iter().all(|c| c.converged),
        all: summarize(&repeat_all).expect("repeats ≥ 1"),
        ecd: summarize(&ecd_present),
        repeat_all,
        repeat_ecd,
        folds,
        cells,
    })
}

fn run_cell(
    model: &dyn ModelSpec,
    d: &Dataset,
    folds: &[Vec<usize>],
    repeat: usize,
    fold: usize,
    cfg: &CvConfig,
) -> Result<FoldResult> {
    let held_out = folds[fold].clone();
    let mut train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    train_idx.sort_unstable();
    if cfg.regime == Regime::Nic {
        train_idx.retain(|&i| d.samples()[i].is_ecd());
        if train_idx.is_empty() {
            return Err(Error::NoEcdInTraining { repeat, fold });
        }
    }
    let raw_train = d.subset(&train_idx);
    let norm = fit_normalizer(&raw_train)?;
    let train = apply_normalizer(&norm, &raw_train)?;
    let test = apply_normalizer(&norm, &d.subset(&held_out))?;

    let fitted = model.fit(&train, &norm, seed::derive(cfg.seed, &[repeat as u64, fold as u64]))?;
    let estimates = fitted.predict(&test)?;
    let measured = test.targets();
    Ok(FoldResult {
        repeat,
        fold,
        n_train: train.len(),
        converged: fitted.converged(),
        all: compute_metrics(&estimates, &measured)?,
        ecd: ecd_metrics(&estimates, &test)?,
        held_out,
        estimates,
        measured,
    })
}

const TABLE_HEADER: [&str; 21] = [
    "model", "regime", "converged",
    "all_mae", "all_mae_sd", "all_mse", "all_mse_sd", "all_std_abs", "all_std_abs_sd", "all_r2", "all_r2_sd",
    "ecd_mae", "ecd_mae_sd", "ecd_mse", "ecd_mse_sd", "ecd_std_abs", "ecd_std_abs_sd", "ecd_r2", "ecd_r2_sd",
    "repeats", "k",
];

fn summary_fields(s: Option<&Summary>) -> Vec<String> {
    match s {
        None => vec![String::new(); 8],
        Some(s) => [
            (s.mean.mae, s.sd.mae),
            (s.mean.mse, s.sd.mse),
            (s.mean.std_abs_resid, s.sd.std_abs_resid),
            (s.mean.r2, s.sd.r2),
        ]
        .iter()
        .flat_map(|(m, sd)| [m.to_string(), sd.to_string()])
        .collect(),
    }
}

/// One row per report: mean and SD of every metric on both ranges.
pub fn write_table_csv<W: Write>(reports: &[CvReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_HEADER)?;
    for r in reports {
        let mut row = vec![r.model.clone(), r.regime.to_string(), r.converged.to_string()];
        row.extend(summary_fields(Some(&r.all)));
        row.extend(summary_fields(r.ecd.as_ref()));
        row.push(r.config.repeats.to_string());
        row.push(r.config.k.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    DryingTime,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    pub center: f64,
    pub mean_abs_residual: f64,
    pub dispersion: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingCurve {
    pub axis: AxisKind,
    pub half_width: f64,
    pub points: Vec<RollingPoint>,
}

/// Mean and sample SD of |residuals| whose axis value lies within
/// `±half_width` of each distinct axis value.
pub fn rolling_mae(
    estimates: &[f64],
    measured: &[f64],
    axis_values: &[f64],
    half_width: f64,
    axis: AxisKind,
) -> Result<RollingCurve> {
    if estimates.len() != measured.len() || estimates.len() != axis_values.len() {
        return Err(Error::Shape("rolling window inputs differ in length".into()));
    }
    if !(half_width > 0.0) {
        return Err(Error::InvalidArgument("half_width must be positive".into()));
    }
    let mut pts: Vec<(f64, f64)> = axis_values
        .iter()
        .zip(estimates.iter().zip(measured))
        .filter(|(a, (e, m))| a.is_finite() && e.is_finite() && m.is_finite())
        .map(|(&a, (e, m))| (a, (m - e).abs()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut centers: Vec<f64> = pts.iter().map(|p| p.0).collect();
    centers.dedup();
    let points = centers
        .into_iter()
        .filter_map(|c| {
            let lo = pts.partition_point(|p| p.0 < c - half_width);
            let hi = pts.partition_point(|p| p.0 <= c + half_width);
            let window: Vec<f64> = pts[lo..hi].iter().map(|p| p.1).collect();
            (!window.is_empty()).then(|| RollingPoint {
                center: c,
                mean_abs_residual: mean(&window),
                dispersion: sample_sd(&window),
                count: window.len(),
            })
        })
        .collect();
    Ok(RollingCurve {
        axis,
        half_width,
        points,
    })
}

impl RollingCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["center", "mean", "dispersion", "count"])?;
        for p in &self.points {
            w.write_record([
                p.center.to_string(),
                p.mean_abs_residual.to_string(),
                p.dispersion.to_string(),
                p.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
