//! Feed-forward MLP regressor trained from scratch.
//!
//! Hidden layer `l` computes `dropout(relu(W_l · bn_l(h_{l-1}) + b_l))`;
//! the output layer is a plain affine map with a linear activation. Batch
//! norm before the first hidden layer therefore normalizes the raw input.
//!
//! All trainable parameters live in one flat vector (see [`Layout`]) so the
//! optimizer and the on-disk blob treat them uniformly.

mod io;
mod train;

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, N_FEATURES};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use io::{load_state, save_state, MANIFEST_VERSION};
pub use train::{mse, train, train_matrices, TrainReport};

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        let mut data = Vec::with_capacity(d.len() * N_FEATURES);
        for s in d {
            data.extend_from_slice(&s.features.0);
        }
        Self {
            rows: d.len(),
            cols: N_FEATURES,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for MlpConfig {
    /// The selected architecture: three hidden layers of 231, 421 and 392
    /// units, learning rate 0.029924, mini-batches of 16.
    fn default() -> Self {
        Self {
            hidden_sizes: vec![231, 421, 392],
            learning_rate: 0.029924,
            batch_size: 16,
            dropout_p: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 5000,
            patience: 200,
            seed: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_sizes.is_empty() {
            return bad("at least one hidden layer is required".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad(format!("zero-width layer in {:?}", self.hidden_sizes));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch statistics".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability must be in [0, 1), got {}", self.dropout_p));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must be in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.bn_eps > 0.0) {
            return bad("epsilons must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch-norm momentum must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Offsets of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlots {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    /// Batch-norm scale and shift on the layer input; `None` for the output layer.
    pub bn: Option<(Range<usize>, Range<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub layers: Vec<LayerSlots>,
    pub n_params: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let mut in_dim = input_dim;
        for (l, &out_dim) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let bn = if l < hidden.len() {
                Some((take(in_dim), take(in_dim)))
            } else {
                None
            };
            let weights = take(out_dim * in_dim);
            let bias = take(out_dim);
            layers.push(LayerSlots {
                in_dim,
                out_dim,
                weights,
                bias,
                bn,
            });
            in_dim = out_dim;
        }
        Layout {
            layers,
            n_params: off,
        }
    }

    pub fn hidden(&self) -> &[LayerSlots] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> &LayerSlots {
        self.layers.last().expect("output layer")
    }
}

/// Trainable weights, batch-norm running statistics and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    pub config: MlpConfig,
    pub input_dim: usize,
    pub layout: Layout,
    pub params: Vec<f64>,
    /// One vector per hidden layer, sized to that layer's input.
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
}

/// Gradients laid out exactly like [`MlpState::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-hidden-layer activations recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct HiddenCache {
    pub batch_mean: Vec<f64>,
    /// Biased batch variance.
    pub batch_var: Vec<f64>,
    inv_std: Vec<f64>,
    x_hat: Vec<f64>,
    /// Batch-norm output, the input of the affine map.
    pub bn_out: Vec<f64>,
    pre_act: Vec<f64>,
    /// Inverted-dropout multipliers (0 or `1/(1-p)`); `None` when `p = 0`.
    pub mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch_size: usize,
    pub hidden: Vec<HiddenCache>,
    /// Input of the output layer.
    last: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl ForwardCache {
    pub fn masks(&self) -> Vec<Option<Vec<f64>>> {
        self.hidden.iter().map(|h| h.mask.clone()).collect()
    }
}

enum Masks<'a> {
    Sample(&'a mut Rng),
    Fixed(&'a [Option<Vec<f64>>]),
}

/// `out[n, o] = b[o] + Σ_i w[o, i] x[n, i]`.
fn affine(x: &[f64], n: usize, in_dim: usize, w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for r in 0..n {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let orow = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, slot) in orow.iter_mut().enumerate() {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            *slot = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    out
}

/// Creates a state for `input_dim` inputs. He-uniform hidden weights,
/// Xavier-uniform output weights, zero biases, `γ = 1`, `β = 0`.
pub fn init_with_input(config: &MlpConfig, input_dim: usize, seed_value: u64) -> Result<MlpState> {
    config.validate()?;
    if input_dim == 0 {
        return Err(Error::InvalidArgument("zero-width input".into()));
    }
    let layout = Layout::new(input_dim, &config.hidden_sizes);
    let mut params = vec![0.0; layout.n_params];
    let mut rng = seed::rng_at(seed_value, &[0x1417]);
    let n_layers = layout.layers.len();
    for (l, slots) in layout.layers.iter().enumerate() {
        let bound = if l + 1 < n_layers {
            (6.0 / slots.in_dim as f64).sqrt()
        } else {
            (6.0 / (slots.in_dim + slots.out_dim) as f64).sqrt()
        };
        for w in &mut params[slots.weights.clone()] {
            *w = rng.random_range(-bound..bound);
        }
        if let Some((gamma, _)) = &slots.bn {
            params[gamma.clone()].fill(1.0);
        }
    }
    let running_mean = layout.hidden().iter().map(|s| vec![0.0; s.in_dim]).collect();
    let running_var = layout.hidden().iter().map(|s| vec![1.0; s.in_dim]).collect();
    Ok(MlpState {
        config: config.clone(),
        input_dim,
        params,
        running_mean,
        running_var,
        adam_m: vec![0.0; layout.n_params],
        adam_v: vec![0.0; layout.n_params],
        layout,
        step: 0,
    })
}

/// State for the seven drying predictors.
pub fn init(config: &MlpConfig, seed_value: u64) -> Result<MlpState> {
    init_with_input(config, N_FEATURES, seed_value)
}

impl MlpState {
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layout
            .layers
            .iter()
            .map(|s| (s.in_dim, s.out_dim))
            .collect()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim {
            return Err(Error::Shape(format!(
                "batch width {} but the network expects {}",
                x.cols, self.input_dim
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: running statistics, no dropout.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let n = x.rows;
        let eps = self.config.bn_eps;
        let mut h = x.data.clone();
        for (l, slots) in self.layout.hidden().iter().enumerate() {
            let (gamma, beta) = slots.bn.clone().expect("hidden layer has batch norm");
            let gamma = &self.params[gamma];
            let beta = &self.params[beta];
            let mean = &self.running_mean[l];
            let inv_std: Vec<f64> = self.running_var[l]
                .iter()
                .map(|v| 1.0 / (v + eps).sqrt())
                .collect();
            let d = slots.in_dim;
            for r in 0..n {
                for j in 0..d {
                    let x_hat = (h[r * d + j] - mean[j]) * inv_std[j];
                    h[r * d + j] = gamma[j] * x_hat + beta[j];
                }
            }
            let mut z = affine(
                &h,
                n,
                d,
                &self.params[slots.weights.clone()],
                &self.params[slots.bias.clone()],
                slots.out_dim,
            );
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            h = z;
        }
        let out = self.layout.output();
        Ok(affine(
            &h,
            n,
            out.in_dim,
            &self.params[out.weights.clone()],
            &self.params[out.bias.clone()],
            1,
        ))
    }

    /// Train-mode forward pass with fresh dropout masks. Does not touch the
    /// running statistics; see [`MlpState::absorb_batch_stats`].
    pub fn forward_train(&self, x: &Matrix, rng: &mut Rng) -> Result<ForwardCache> {
        self.forward_train_impl(x, Masks::Sample(rng))
    }

    /// Train-mode forward pass reusing recorded dropout masks (one entry
    /// per hidden layer).
    pub fn forward_train_with_masks(
        &self,
        x: &Matrix,
        masks: &[Option<Vec<f64>>],
    ) -> Result<ForwardCache> {
        if masks.len() != self.layout.hidden().len() {
            return Err(Error::Shape("one mask entry per hidden layer".into()));
        }
        self.forward_train_impl(x, Masks::Fixed(masks))
    }

    fn forward_train_impl(&self, x: &Matrix, mut masks: Masks<'_>) -> Result<ForwardCache> {
        self.check_width(x)?;
        let n = x.rows;
        if n < 2 {
            return Err(Error::InvalidArgument(
                "train-mode batches need at least 2 samples".into(),
            ));
        }
        let eps = self.config.bn_eps;
        let p = self.config.dropout_p;
        let keep_scale = 1.0 / (1.0 - p);
        let mut h = x.data.clone();
        let mut hidden = Vec::with_capacity(self.layout.hidden().len());
        for (l, slots) in self.layout.hidden().iter().enumerate() {
            let d = slots.in_dim;
            let (gamma, beta) = slots.bn.clone().expect("hidden layer has batch norm");
            let gamma = &self.params[gamma];
            let beta = &self.params[beta];

            let mut mean = vec![0.0; d];
            for r in 0..n {
                for j in 0..d {
                    mean[j] += h[r * d + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for r in 0..n {
                for j in 0..d {
                    let c = h[r * d + j] - mean[j];
                    var[j] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

            let mut x_hat = vec![0.0; n * d];
            let mut bn_out = vec![0.0; n * d];
            for r in 0..n {
                for j in 0..d {
                    let xh = (h[r * d + j] - mean[j]) * inv_std[j];
                    x_hat[r * d + j] = xh;
                    bn_out[r * d + j] = gamma[j] * xh + beta[j];
                }
            }
            let pre_act = affine(
                &bn_out,
                n,
                d,
                &self.params[slots.weights.clone()],
                &self.params[slots.bias.clone()],
                slots.out_dim,
            );
            let mut act: Vec<f64> = pre_act.iter().map(|v| v.max(0.0)).collect();
            let mask = match &mut masks {
                Masks::Fixed(m) => m[l].clone(),
                Masks::Sample(rng) if p > 0.0 => Some(
                    (0..act.len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                        .collect(),
                ),
                Masks::Sample(_) => None,
            };
            if let Some(m) = &mask {
                if m.len() != act.len() {
                    return Err(Error::Shape("dropout mask does not match the batch".into()));
                }
                act.iter_mut().zip(m).for_each(|(a, k)| *a *= k);
            }
            hidden.push(HiddenCache {
                batch_mean: mean,
                batch_var: var,
                inv_std,
                x_hat,
                bn_out,
                pre_act,
                mask,
            });
            h = act;
        }
        let out = self.layout.output();
        let predictions = affine(
            &h,
            n,
            out.in_dim,
            &self.params[out.weights.clone()],
            &self.params[out.bias.clone()],
            1,
        );
        Ok(ForwardCache {
            batch_size: n,
            hidden,
            last: h,
            predictions,
        })
    }

    /// Folds a train-mode batch's statistics into the running averages
    /// (unbiased variance, momentum from the config).
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        let m = self.config.bn_momentum;
        let n = cache.batch_size as f64;
        let unbias = n / (n - 1.0);
        for (l, hc) in cache.hidden.iter().enumerate() {
            for (rm, bm) in self.running_mean[l].iter_mut().zip(&hc.batch_mean) {
                *rm = (1.0 - m) * *rm + m * bm;
            }
            for (rv, bv) in self.running_var[l].iter_mut().zip(&hc.batch_var) {
                *rv = (1.0 - m) * *rv + m * bv * unbias;
            }
        }
    }

    /// Forward pass in either mode. Train mode samples dropout masks from
    /// `rng` and updates the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        match mode {
            Mode::Infer => Ok((self.forward_infer(x)?, None)),
            Mode::Train => {
                let cache = self.forward_train(x, rng)?;
                self.absorb_batch_stats(&cache);
                Ok((cache.predictions.clone(), Some(cache)))
            }
        }
    }

    /// Exact gradients of the batch MSE through the recorded forward pass.
    pub fn backward(&self, cache: &ForwardCache, targets: &[f64]) -> Result<Gradients> {
        let n = cache.batch_size;
        if targets.len() != n {
            return Err(Error::Shape(format!("{} targets for a batch of {n}", targets.len())));
        }
        let mut g = vec![0.0; self.layout.n_params];
        let scale = 2.0 / n as f64;
        let d_out: Vec<f64> = cache
            .predictions
            .iter()
            .zip(targets)
            .map(|(p, y)| scale * (p - y))
            .collect();

        let out = self.layout.output();
        let w_out = &self.params[out.weights.clone()];
        let d_last = out.in_dim;
        let mut dh = vec![0.0; n * d_last];
        {
            let gw = out.weights.start;
            for r in 0..n {
                let dy = d_out[r];
                g[out.bias.start] += dy;
                for j in 0..d_last {
                    g[gw + j] += dy * cache.last[r * d_last + j];
                    dh[r * d_last + j] = dy * w_out[j];
                }
            }
        }

        for (l, slots) in self.layout.hidden().iter().enumerate().rev() {
            let hc = &cache.hidden[l];
            let (din, dout) = (slots.in_dim, slots.out_dim);
            // through dropout and ReLU
            let mut dz = dh;
            if let Some(m) = &hc.mask {
                dz.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            dz.iter_mut()
                .zip(&hc.pre_act)
                .for_each(|(v, z)| if *z <= 0.0 { *v = 0.0 });

            let w = &self.params[slots.weights.clone()];
            let mut d_bn = vec![0.0; n * din];
            for r in 0..n {
                let xr = &hc.bn_out[r * din..(r + 1) * din];
                let dbr = &mut d_bn[r * din..(r + 1) * din];
                for o in 0..dout {
                    let dzv = dz[r * dout + o];
                    if dzv == 0.0 {
                        continue;
                    }
                    g[slots.bias.start + o] += dzv;
                    let gw = &mut g[slots.weights.start + o * din..slots.weights.start + (o + 1) * din];
                    let wr = &w[o * din..(o + 1) * din];
                    for j in 0..din {
                        gw[j] += dzv * xr[j];
                        dbr[j] += dzv * wr[j];
                    }
                }
            }

            let (gamma_r, beta_r) = slots.bn.clone().expect("hidden layer has batch norm");
            let gamma = &self.params[gamma_r.clone()];
            let mut sum_dxh = vec![0.0; din];
            let mut sum_dxh_xh = vec![0.0; din];
            for r in 0..n {
                for j in 0..din {
                    let db = d_bn[r * din + j];
                    let xh = hc.x_hat[r * din + j];
                    g[gamma_r.start + j] += db * xh;
                    g[beta_r.start + j] += db;
                    let dxh = db * gamma[j];
                    sum_dxh[j] += dxh;
                    sum_dxh_xh[j] += dxh * xh;
                }
            }
            if l == 0 {
                break;
            }
            let nf = n as f64;
            let mut dx = vec![0.0; n * din];
            for r in 0..n {
                for j in 0..din {
                    let dxh = d_bn[r * din + j] * gamma[j];
                    let xh = hc.x_hat[r * din + j];
                    dx[r * din + j] =
                        hc.inv_std[j] / nf * (nf * dxh - sum_dxh[j] - xh * sum_dxh_xh[j]);
                }
            }
            dh = dx;
        }
        Ok(Gradients(g))
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(Error::Shape("gradient length does not match parameters".into()));
        }
        self.step += 1;
        let (b1, b2, eps) = (self.config.adam_beta1, self.config.adam_beta2, self.config.adam_eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, m), v), g) in self
            .params
            .iter_mut()
            .zip(&mut self.adam_m)
            .zip(&mut self.adam_v)
            .zip(&grads.0)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.forward_infer(x)
    }
}

/// Inference on every sample of a dataset normalized with the training
/// normalizer. Estimates are on the normalized MC scale.
pub fn predict(state: &MlpState, d: &Dataset) -> Vec<f64> {
    state
        .forward_infer(&Matrix::from_dataset(d))
        .expect("dataset rows always have the predictor width")
}

#[cfg(test)]
mod tests;
