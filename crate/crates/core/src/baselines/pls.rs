//! PLS1 regression by NIPALS on standardized inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    /// Components actually extracted (may be below the request).
    pub n_components: usize,
    pub requested_components: usize,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Per component: X weights `w`, X loadings `p`, y loading `q`.
    pub weights: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub y_loadings: Vec<f64>,
    /// Training X-scores, one vector per component.
    pub scores: Vec<Vec<f64>>,
    /// Coefficients on the original (unscaled) features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

fn mean_sd(col: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = col.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pls_fit<R: AsRef<[f64]>>(x: &[R], y: &[f64], n_components: usize) -> Result<PlsModel> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyDataset("PLS training set"));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
    }
    let p = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != p) {
        return Err(Error::Shape("ragged feature rows".into()));
    }

    let mut x_mean = vec![0.0; p];
    let mut x_scale = vec![1.0; p];
    for j in 0..p {
        let (m, s) = mean_sd(x.iter().map(|r| r.as_ref()[j]), n);
        x_mean[j] = m;
        if s > 0.0 {
            x_scale[j] = s;
        }
    }
    let (y_mean, y_sd) = mean_sd(y.iter().copied(), n);
    let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };

    let non_constant = x_scale
        .iter()
        .zip(0..p)
        .any(|(_, j)| x.iter().any(|r| r.as_ref()[j] != x[0].as_ref()[j]));
    if n_components > 0 && !non_constant {
        return Err(Error::InvalidArgument(
            "PLS needs at least one non-constant feature".into(),
        ));
    }

    // column-major working copies
    let mut xs: Vec<Vec<f64>> = (0..p)
        .map(|j| x.iter().map(|r| (r.as_ref()[j] - x_mean[j]) / x_scale[j]).collect())
        .collect();
    let mut ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
    let x_norm0: f64 = xs.iter().map(|c| dot(c, c)).sum();

    let mut weights = Vec::new();
    let mut loadings = Vec::new();
    let mut y_loadings = Vec::new();
    let mut scores = Vec::new();

    for _ in 0..n_components.min(p).min(n) {
        let mut w: Vec<f64> = xs.iter().map(|c| dot(c, &ys)).collect();
        let w_norm = dot(&w, &w).sqrt();
        if !(w_norm > 1e-12 * x_norm0.sqrt().max(1.0)) {
            break;
        }
        w.iter_mut().for_each(|v| *v /= w_norm);
        let mut t = vec![0.0; n];
        for (c, wj) in xs.iter().zip(&w) {
            for (ti, ci) in t.iter_mut().zip(c) {
                *ti += ci * wj;
            }
        }
        let tt = dot(&t, &t);
        if !(tt > 1e-20 * x_norm0.max(1e-300)) {
            break;
        }
        let load: Vec<f64> = xs.iter().map(|c| dot(c, &t) / tt).collect();
        let q = dot(&ys, &t) / tt;
        for (c, pj) in xs.iter_mut().zip(&load) {
            for (ci, ti) in c.iter_mut().zip(&t) {
                *ci -= ti * pj;
            }
        }
        for (yi, ti) in ys.iter_mut().zip(&t) {
            *yi -= q * ti;
        }
        weights.push(w);
        loadings.push(load);
        y_loadings.push(q);
        scores.push(t);
    }

    let a = weights.len();
    if a < n_components {
        log::info!("PLS stopped at {a} of {n_components} requested components");
    }
    // B = W (P^T W)^{-1} q in the standardized space
    let mut beta_std = vec![0.0; p];
    if a > 0 {
        let mut ptw = vec![0.0; a * a];
        for i in 0..a {
            for k in 0..a {
                ptw[i * a + k] = dot(&loadings[i], &weights[k]);
            }
        }
        let r = lu_solve(&ptw, a, &y_loadings)
            .ok_or_else(|| Error::Domain("singular PLS loading system".into()))?;
        for (k, rk) in r.iter().enumerate() {
            for j in 0..p {
                beta_std[j] += weights[k][j] * rk;
            }
        }
    }
    let coefficients: Vec<f64> = (0..p).map(|j| beta_std[j] * y_scale / x_scale[j]).collect();
    let intercept = y_mean - dot(&coefficients, &x_mean);

    Ok(PlsModel {
        n_components: a,
        requested_components: n_components,
        x_mean,
        x_scale,
        y_mean,
        y_scale,
        weights,
        loadings,
        y_loadings,
        scores,
        coefficients,
        intercept,
    })
}

pub fn pls_predict<R: AsRef<[f64]>>(m: &PlsModel, x: &[R]) -> Result<Vec<f64>> {
    x.iter()
        .map(|r| {
            let r = r.as_ref();
            if r.len() != m.coefficients.len() {
                return Err(Error::Shape(format!(
                    "expected {} features, got {}",
                    m.coefficients.len(),
                    r.len()
                )));
            }
            Ok(m.y_mean + m.coefficients.iter().zip(r).zip(&m.x_mean).map(|((b, v), mu)| b * (v - mu)).sum::<f64>())
        })
        .collect()
}
