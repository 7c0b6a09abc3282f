//! Semi-empirical thin-layer drying curves and a Levenberg-Marquardt fitter.
//!
//! All curves are moisture *ratios* (≈ 1 at `t = 0`). Dataset targets live
//! on the normalized `[0, 100]` MC scale and are divided by 100 before
//! fitting; predictions are multiplied back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::cholesky_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinLayerFamily {
    /// `exp(-k t)`
    Lewis,
    /// `exp(-k t^n)`
    Page,
    /// `a exp(-k1 t) + b exp(-k2 t)`
    TwoTerm,
    /// `a exp(-k t)`
    Henderson,
    /// `a exp(-k t) + c`
    Logarithmic,
    /// `a exp(-k t^n) + b t`
    Midilli,
}

impl ThinLayerFamily {
    pub const ALL: [ThinLayerFamily; 6] = [
        ThinLayerFamily::Lewis,
        ThinLayerFamily::Page,
        ThinLayerFamily::TwoTerm,
        ThinLayerFamily::Henderson,
        ThinLayerFamily::Logarithmic,
        ThinLayerFamily::Midilli,
    ];

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Self::Lewis => &["k"],
            Self::Page => &["k", "n"],
            Self::TwoTerm => &["a", "k1", "b", "k2"],
            Self::Henderson => &["a", "k"],
            Self::Logarithmic => &["a", "k", "c"],
            Self::Midilli => &["a", "k", "n", "b"],
        }
    }

    pub fn arity(self) -> usize {
        self.param_names().len()
    }

    /// Positions of the rate constants, which are clamped at zero when
    /// bounds are enabled.
    pub fn rate_indices(self) -> &'static [usize] {
        match self {
            Self::Lewis | Self::Page => &[0],
            Self::TwoTerm => &[1, 3],
            Self::Henderson | Self::Logarithmic | Self::Midilli => &[1],
        }
    }

    /// Machine name, as used on the command line and in JSON.
    pub fn key(self) -> &'static str {
        match self {
            Self::Lewis => "lewis",
            Self::Page => "page",
            Self::TwoTerm => "two-term",
            Self::Henderson => "henderson",
            Self::Logarithmic => "logarithmic",
            Self::Midilli => "midilli",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Lewis => "Lewis",
            Self::Page => "Page",
            Self::TwoTerm => "Two term",
            Self::Henderson => "Henderson",
            Self::Logarithmic => "Logarithmic",
            Self::Midilli => "Midilli et al.",
        }
    }

    pub fn check_arity(self, p: &[f64]) -> Result<()> {
        if p.len() != self.arity() {
            return Err(Error::Arity {
                family: self.key(),
                expected: self.arity(),
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Closed form without argument checks. `p` must have the right arity.
    pub fn eval_unchecked(self, p: &[f64], t: f64) -> f64 {
        match self {
            Self::Lewis => (-p[0] * t).exp(),
            Self::Page => (-p[0] * t.powf(p[1])).exp(),
            Self::TwoTerm => p[0] * (-p[1] * t).exp() + p[2] * (-p[3] * t).exp(),
            Self::Henderson => p[0] * (-p[1] * t).exp(),
            Self::Logarithmic => p[0] * (-p[1] * t).exp() + p[2],
            Self::Midilli => p[0] * (-p[1] * t.powf(p[2])).exp() + p[3] * t,
        }
    }

    /// Analytic partial derivatives w.r.t. each parameter, written to `out`.
    /// The `t^n ln t` terms are taken as 0 at `t = 0`.
    pub fn gradient_unchecked(self, p: &[f64], t: f64, out: &mut [f64]) {
        let t_ln = |n: f64| if t > 0.0 { t.powf(n) * t.ln() } else { 0.0 };
        match self {
            Self::Lewis => {
                out[0] = -t * (-p[0] * t).exp();
            }
            Self::Page => {
                let tn = t.powf(p[1]);
                let e = (-p[0] * tn).exp();
                out[0] = -tn * e;
                out[1] = -p[0] * t_ln(p[1]) * e;
            }
            Self::TwoTerm => {
                let e1 = (-p[1] * t).exp();
                let e2 = (-p[3] * t).exp();
                out[0] = e1;
                out[1] = -p[0] * t * e1;
                out[2] = e2;
                out[3] = -p[2] * t * e2;
            }
            Self::Henderson => {
                let e = (-p[1] * t).exp();
                out[0] = e;
                out[1] = -p[0] * t * e;
            }
            Self::Logarithmic => {
                let e = (-p[1] * t).exp();
                out[0] = e;
                out[1] = -p[0] * t * e;
                out[2] = 1.0;
            }
            Self::Midilli => {
                let tn = t.powf(p[2]);
                let e = (-p[1] * tn).exp();
                out[0] = e;
                out[1] = -p[0] * tn * e;
                out[2] = -p[0] * p[1] * t_ln(p[2]) * e;
                out[3] = t;
            }
        }
    }

    /// The deterministic multi-start grid: rates `{0.001, 0.01, 0.1, 1}`,
    /// each with the default shape and with a shifted shape (rates ×3).
    pub fn default_starts(self) -> Vec<Vec<f64>> {
        let mut starts = Vec::with_capacity(8);
        for &k in &[0.001, 0.01, 0.1, 1.0] {
            starts.push(match self {
                Self::Lewis => vec![k],
                Self::Page => vec![k, 1.0],
                Self::TwoTerm => vec![1.0, k, 1.0, k / 10.0],
                Self::Henderson => vec![1.0, k],
                Self::Logarithmic => vec![1.0, k, 0.0],
                Self::Midilli => vec![1.0, k, 1.0, 0.0],
            });
            let k3 = 3.0 * k;
            starts.push(match self {
                Self::Lewis => vec![k3],
                Self::Page => vec![k3, 0.7],
                Self::TwoTerm => vec![0.5, k3, 0.5, k3 / 10.0],
                Self::Henderson => vec![0.8, k3],
                Self::Logarithmic => vec![0.8, k3, 0.2],
                Self::Midilli => vec![0.8, k3, 0.7, 0.0],
            });
        }
        starts
    }
}

impl fmt::Display for ThinLayerFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for ThinLayerFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Self::ALL
            .into_iter()
            .find(|f| f.key() == norm || (norm == "twoterm" && *f == Self::TwoTerm))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown thin-layer family `{s}`")))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("drying time must be >= 0, got {t}")));
    }
    Ok(())
}

pub fn evaluate(family: ThinLayerFamily, p: &[f64], t: f64) -> Result<f64> {
    family.check_arity(p)?;
    check_time(t)?;
    Ok(family.eval_unchecked(p, t))
}

pub fn jacobian_row(family: ThinLayerFamily, p: &[f64], t: f64) -> Result<Vec<f64>> {
    family.check_arity(p)?;
    check_time(t)?;
    let mut out = vec![0.0; family.arity()];
    family.gradient_unchecked(p, t, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Damping multiplier on a rejected step; the divisor on an accepted one.
    pub damping_factor: f64,
    /// Clamp rate constants at zero after each step.
    pub bounds: bool,
    pub step_tolerance: f64,
    pub sse_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            initial_damping: 1e-3,
            damping_factor: 10.0,
            bounds: true,
            step_tolerance: 1e-10,
            sse_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: ThinLayerFamily,
    pub params: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A damped normal matrix failed to factor at some point.
    pub condition_flag: bool,
}

#[derive(Serialize, Deserialize)]
struct NamedParam {
    name: String,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct FitResultRepr {
    family: ThinLayerFamily,
    parameters: Vec<NamedParam>,
    sse: f64,
    iterations: usize,
    converged: bool,
    #[serde(default)]
    condition_flag: bool,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FitResultRepr {
            family: self.family,
            parameters: self
                .family
                .param_names()
                .iter()
                .zip(&self.params)
                .map(|(n, v)| NamedParam {
                    name: n.to_string(),
                    value: *v,
                })
                .collect(),
            sse: self.sse,
            iterations: self.iterations,
            converged: self.converged,
            condition_flag: self.condition_flag,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = FitResultRepr::deserialize(d)?;
        let names = r.family.param_names();
        if r.parameters.len() != names.len()
            || r.parameters.iter().zip(names).any(|(p, n)| p.name != *n)
        {
            return Err(D::Error::custom(format!(
                "parameters must be {names:?} for {}",
                r.family.key()
            )));
        }
        Ok(FitResult {
            family: r.family,
            params: r.parameters.into_iter().map(|p| p.value).collect(),
            sse: r.sse,
            iterations: r.iterations,
            converged: r.converged,
            condition_flag: r.condition_flag,
        })
    }
}

impl FitResult {
    pub fn predict_ratio(&self, t: f64) -> f64 {
        self.family.eval_unchecked(&self.params, t)
    }
}

fn sse_of(family: ThinLayerFamily, p: &[f64], times: &[f64], targets: &[f64]) -> f64 {
    times
        .iter()
        .zip(targets)
        .map(|(&t, &y)| {
            let r = y - family.eval_unchecked(p, t);
            r * r
        })
        .sum()
}

fn clamp_rates(family: ThinLayerFamily, p: &mut [f64]) {
    for &i in family.rate_indices() {
        if p[i] < 0.0 {
            p[i] = 0.0;
        }
    }
}

/// Levenberg-Marquardt minimization of `Σ (target - curve(t))²` from `init`.
///
/// Uses Marquardt's diagonal scaling. Rejected steps raise the damping, so
/// the SSE never increases across accepted steps. Hitting the iteration cap
/// returns the current iterate with `converged = false`.
pub fn fit_lm(
    family: ThinLayerFamily,
    times: &[f64],
    targets: &[f64],
    init: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    family.check_arity(init)?;
    let n = family.arity();
    if times.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} times vs {} targets",
            times.len(),
            targets.len()
        )));
    }
    if times.len() < n {
        return Err(Error::InvalidArgument(format!(
            "{} needs at least {n} points, got {}",
            family.key(),
            times.len()
        )));
    }
    for &t in times {
        check_time(t)?;
    }

    let mut p = init.to_vec();
    if opts.bounds {
        clamp_rates(family, &mut p);
    }
    let mut sse = sse_of(family, &p, times, targets);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut condition_flag = false;
    let mut iterations = 0;

    let mut row = vec![0.0; n];
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    let mut trial = vec![0.0; n];

    if sse == 0.0 {
        converged = true;
    }
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        jtj.fill(0.0);
        jtr.fill(0.0);
        for (&t, &y) in times.iter().zip(targets) {
            family.gradient_unchecked(&p, t, &mut row);
            let r = y - family.eval_unchecked(&p, t);
            for i in 0..n {
                jtr[i] += row[i] * r;
                for j in 0..=i {
                    jtj[i * n + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                jtj[j * n + i] = jtj[i * n + j];
            }
        }
        if jtr.iter().all(|g| g.abs() <= f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let max_diag = (0..n).map(|i| jtj[i * n + i]).fold(0.0, f64::max);
        let floor = (max_diag * 1e-12).max(1e-300);

        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[i * n + i] += lambda * jtj[i * n + i].max(floor);
            }
            let Some(step) = cholesky_solve(&a, n, &jtr) else {
                condition_flag = true;
                lambda *= opts.damping_factor;
                if lambda > 1e20 {
                    break;
                }
                continue;
            };
            for i in 0..n {
                trial[i] = p[i] + step[i];
            }
            if opts.bounds {
                clamp_rates(family, &mut trial);
            }
            let trial_sse = sse_of(family, &trial, times, targets);
            let rel_step = (0..n)
                .map(|i| (trial[i] - p[i]).abs() / (p[i].abs() + 1e-12))
                .fold(0.0, f64::max);
            if trial_sse.is_finite() && trial_sse < sse {
                let rel_decrease = (sse - trial_sse) / sse;
                p.copy_from_slice(&trial);
                sse = trial_sse;
                lambda = (lambda / opts.damping_factor).max(1e-15);
                if sse == 0.0 || rel_step < opts.step_tolerance || rel_decrease < opts.sse_tolerance
                {
                    converged = true;
                }
                break;
            }
            lambda *= opts.damping_factor;
            if rel_step < opts.step_tolerance || lambda > 1e20 {
                // no representable descent step left: a floating-point minimum
                converged = true;
                break;
            }
        }
        if lambda > 1e20 && !converged {
            break;
        }
    }

    Ok(FitResult {
        family,
        params: p,
        sse,
        iterations,
        converged,
        condition_flag,
    })
}

/// Runs [`fit_lm`] from every [`ThinLayerFamily::default_starts`] entry and
/// keeps the lowest SSE, ties broken by start index.
pub fn fit_multistart(
    family: ThinLayerFamily,
    times: &[f64],
    targets: &[f64],
    opts: &FitOptions,
    exec: Exec,
) -> Result<FitResult> {
    let starts = family.default_starts();
    let fits = exec.map(&starts, |_, init| fit_lm(family, times, targets, init, opts));
    let mut best: Option<FitResult> = None;
    for fit in fits {
        let fit = fit?;
        let better = match &best {
            None => true,
            Some(b) => fit.sse.total_cmp(&b.sse).is_lt() && !fit.sse.is_nan(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Fits a curve to a dataset: drying time against MC / 100.
pub fn fit_dataset(
    family: ThinLayerFamily,
    d: &Dataset,
    opts: &FitOptions,
    exec: Exec,
) -> Result<FitResult> {
    let times = d.drying_times();
    let targets: Vec<f64> = d.iter().map(|s| s.mc / 100.0).collect();
    fit_multistart(family, &times, &targets, opts, exec)
}

/// Per-sample estimates on the `[0, 100]` MC scale; only the drying time is
/// used.
pub fn predict_dataset(fit: &FitResult, d: &Dataset) -> Vec<f64> {
    d.iter()
        .map(|s| 100.0 * fit.predict_ratio(s.features.drying_time()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureVector, Sample};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize, t_max: f64) -> Vec<f64> {
        (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
    }

    fn central_diff(family: ThinLayerFamily, p: &[f64], t: f64, h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                let mut hi = p.to_vec();
                let mut lo = p.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (family.eval_unchecked(&hi, t) - family.eval_unchecked(&lo, t)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn closed_forms() {
        use ThinLayerFamily::*;
        assert_eq!(evaluate(Lewis, &[0.1], 0.0).unwrap(), 1.0);
        assert_relative_eq!(evaluate(Lewis, &[0.1], 10.0).unwrap(), 0.36788, epsilon = 1e-5);
        for t in [0.0, 0.5, 7.0, 300.0] {
            assert_eq!(evaluate(Midilli, &[1.0, 0.0, 1.0, 0.0], t).unwrap(), 1.0);
            assert_eq!(
                evaluate(Lewis, &[0.2], t).unwrap(),
                evaluate(Henderson, &[1.0, 0.2], t).unwrap()
            );
        }
        assert_eq!(evaluate(Page, &[0.3, 0.5], 0.0).unwrap(), 1.0);
        assert!(matches!(evaluate(Page, &[0.3], 1.0), Err(Error::Arity { .. })));
        assert!(evaluate(Lewis, &[0.3], -1.0).is_err());
    }

    #[test]
    fn jacobian_examples() {
        use ThinLayerFamily::*;
        let j = jacobian_row(Lewis, &[0.1], 10.0).unwrap();
        assert_relative_eq!(j[0], -10.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(j[0], -3.6788, epsilon = 1e-4);
        assert_eq!(jacobian_row(Henderson, &[1.0, 0.0], 5.0).unwrap(), vec![1.0, -5.0]);
        // t = 0 limit for the t^n ln t term
        let j = jacobian_row(Midilli, &[1.0, 0.2, 0.6, 0.01], 0.0).unwrap();
        assert_eq!(j[2], 0.0);
        assert!(j.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            fi in 0usize..6,
            t in 0.05f64..80.0,
            a in 0.3f64..1.5,
            k in 0.001f64..0.2,
            n in 0.5f64..1.6,
            b in -0.01f64..0.5,
            k2 in 0.0005f64..0.05,
        ) {
            let family = ThinLayerFamily::ALL[fi];
            let p: Vec<f64> = match family {
                ThinLayerFamily::Lewis => vec![k],
                ThinLayerFamily::Page => vec![k, n],
                ThinLayerFamily::TwoTerm => vec![a, k, b.abs(), k2],
                ThinLayerFamily::Henderson => vec![a, k],
                ThinLayerFamily::Logarithmic => vec![a, k, b],
                ThinLayerFamily::Midilli => vec![a, k, n, b / 100.0],
            };
            let analytic = jacobian_row(family, &p, t).unwrap();
            let numeric = central_diff(family, &p, t, 1e-6);
            for (x, y) in analytic.iter().zip(&numeric) {
                let scale = x.abs().max(1e-3);
                prop_assert!((x - y).abs() / scale < 1e-5, "{family:?} {p:?} t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn lewis_recovery_from_far_start() {
        let t = grid(40, 60.0);
        let y: Vec<f64> = t.iter().map(|&t| (-0.07 * t).exp()).collect();
        let fit = fit_lm(ThinLayerFamily::Lewis, &t, &y, &[0.5], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - 0.07).abs() < 1e-6, "{:?}", fit);
        assert!(fit.sse < 1e-18);
    }

    #[test]
    fn midilli_recovery() {
        let truth = [0.98, 0.03, 1.1, -0.001];
        let t = grid(50, 60.0);
        let y: Vec<f64> = t
            .iter()
            .map(|&t| ThinLayerFamily::Midilli.eval_unchecked(&truth, t))
            .collect();
        let fit = fit_multistart(
            ThinLayerFamily::Midilli,
            &t,
            &y,
            &FitOptions::default(),
            Exec::Serial,
        )
        .unwrap();
        for (p, q) in fit.params.iter().zip(&truth) {
            assert!(((p - q) / q).abs() < 1e-4, "{:?}", fit);
        }
    }

    #[test]
    fn flat_curve_drives_rate_to_zero() {
        let t = grid(20, 50.0);
        let y = vec![1.0; 20];
        let fit = fit_lm(ThinLayerFamily::Lewis, &t, &y, &[0.1], &FitOptions::default()).unwrap();
        assert!(fit.params[0].abs() < 1e-8);
        assert!(fit.sse < 1e-14);
    }

    #[test]
    fn sse_is_monotone_across_iterations() {
        // replay with growing iteration caps: accepted iterates never get worse
        let truth = [0.6, 0.08, 0.4, 0.01];
        let t = grid(30, 120.0);
        let y: Vec<f64> = t
            .iter()
            .map(|&t| ThinLayerFamily::TwoTerm.eval_unchecked(&truth, t) + 0.001 * (t * 1.7).sin())
            .collect();
        let mut last = f64::INFINITY;
        for cap in 0..40 {
            let opts = FitOptions {
                max_iterations: cap,
                ..FitOptions::default()
            };
            let fit = fit_lm(ThinLayerFamily::TwoTerm, &t, &y, &[1.0, 0.5, 1.0, 0.05], &opts).unwrap();
            assert!(fit.sse <= last);
            last = fit.sse;
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let t = grid(30, 60.0);
        let y: Vec<f64> = t.iter().map(|&t| (-0.05 * t).exp()).collect();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let fit = fit_lm(ThinLayerFamily::Lewis, &t, &y, &[2.0], &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn bounds_keep_rates_non_negative() {
        // growing data would pull k negative
        let t = grid(10, 10.0);
        let y: Vec<f64> = t.iter().map(|&t| (0.05 * t).exp()).collect();
        let fit = fit_lm(ThinLayerFamily::Lewis, &t, &y, &[0.1], &FitOptions::default()).unwrap();
        assert!(fit.params[0] >= 0.0);
        let free = FitOptions {
            bounds: false,
            ..FitOptions::default()
        };
        let fit = fit_lm(ThinLayerFamily::Lewis, &t, &y, &[0.1], &free).unwrap();
        assert!(fit.params[0] < 0.0);
    }

    #[test]
    fn fit_input_errors() {
        let opts = FitOptions::default();
        assert!(fit_lm(ThinLayerFamily::Page, &[1.0], &[1.0], &[0.1, 1.0], &opts).is_err());
        assert!(fit_lm(ThinLayerFamily::Lewis, &[1.0, 2.0], &[1.0], &[0.1], &opts).is_err());
        assert!(fit_lm(ThinLayerFamily::Lewis, &[1.0], &[1.0], &[0.1, 2.0], &opts).is_err());
    }

    #[test]
    fn multistart_is_exec_independent() {
        let t = grid(25, 90.0);
        let y: Vec<f64> = t
            .iter()
            .map(|&t| 0.9 * (-0.04 * t).exp() + 0.08 + 0.002 * (t * 0.3).cos())
            .collect();
        for f in ThinLayerFamily::ALL {
            let a = fit_multistart(f, &t, &y, &FitOptions::default(), Exec::Serial).unwrap();
            let b = fit_multistart(f, &t, &y, &FitOptions::default(), Exec::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    fn dataset(times: &[f64], mc: impl Fn(f64) -> f64) -> Dataset {
        Dataset::new(
            times
                .iter()
                .map(|&t| {
                    let mut f = [1.0; 7];
                    f[0] = t;
                    Sample::new("e", FeatureVector(f), mc(t))
                })
                .collect(),
        )
    }

    #[test]
    fn predict_dataset_scale_bookkeeping() {
        let times = grid(15, 100.0);
        let d = dataset(&times, |t| 100.0 * (0.85 * (-0.03 * t).exp() + 0.1) + (t * 0.9).sin());
        let fit = fit_dataset(ThinLayerFamily::Lewis, &d, &FitOptions::default(), Exec::Serial).unwrap();
        let est = predict_dataset(&fit, &d);
        assert_eq!(est[0], 100.0);
        let ss: f64 = est.iter().zip(d.targets()).map(|(e, m)| (e - m).powi(2)).sum();
        assert_relative_eq!(ss, fit.sse * 1e4, max_relative = 1e-9);

        let log_fit = FitResult {
            family: ThinLayerFamily::Logarithmic,
            params: vec![0.7, 0.05, 0.2],
            sse: 0.0,
            iterations: 0,
            converged: true,
            condition_flag: false,
        };
        let far = dataset(&[1e6], |_| 0.0);
        assert_relative_eq!(predict_dataset(&log_fit, &far)[0], 20.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_result_json_names_parameters() {
        let fit = FitResult {
            family: ThinLayerFamily::Page,
            params: vec![0.02, 1.2],
            sse: 1e-3,
            iterations: 7,
            converged: true,
            condition_flag: false,
        };
        let json = serde_json::to_value(&fit).unwrap();
        assert_eq!(json["family"], "page");
        assert_eq!(json["parameters"][1]["name"], "n");
        assert_eq!(json["parameters"][1]["value"], 1.2);
        let back: FitResult = serde_json::from_value(json).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("two_term".parse::<ThinLayerFamily>().unwrap(), ThinLayerFamily::TwoTerm);
        assert_eq!("Midilli".parse::<ThinLayerFamily>().unwrap(), ThinLayerFamily::Midilli);
        assert!("newton".parse::<ThinLayerFamily>().is_err());
        for f in ThinLayerFamily::ALL {
            assert_eq!(f.default_starts().len(), 8);
        }
    }
}
