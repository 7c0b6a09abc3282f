use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{init_with_input, Matrix, MlpConfig, MlpState};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

const EPOCH_STREAM: u64 = 0xE90C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    /// Zero-based epoch whose snapshot was returned.
    pub best_epoch: usize,
    /// Mean train-mode batch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Inference-mode validation loss per epoch.
    pub val_loss: Vec<f64>,
}

/// Mean squared error. Both slices must have equal length.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let s: f64 = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum();
    s / pred.len() as f64
}

/// Mini-batch boundaries over `n` shuffled rows. A trailing batch of one
/// row is folded into the previous batch so every batch has a variance.
fn batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(size)
        .map(|s| s..(s + size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Trains on normalized datasets, early-stopping on the validation set.
pub fn train(config: &MlpConfig, train_set: &Dataset, val_set: &Dataset) -> Result<(MlpState, TrainReport)> {
    if !train_set.is_normalized() || !val_set.is_normalized() {
        return Err(Error::NotNormalized);
    }
    train_matrices(
        config,
        &Matrix::from_dataset(train_set),
        &train_set.targets(),
        &Matrix::from_dataset(val_set),
        &val_set.targets(),
    )
}

/// Adam over shuffled mini-batches. After each epoch the validation MSE is
/// computed in inference mode; training stops once `patience` consecutive
/// epochs fail to improve it, and the best snapshot is returned.
pub fn train_matrices(
    config: &MlpConfig,
    x_train: &Matrix,
    y_train: &[f64],
    x_val: &Matrix,
    y_val: &[f64],
) -> Result<(MlpState, TrainReport)> {
    config.validate()?;
    if x_train.rows == 0 {
        return Err(Error::EmptyDataset("training set"));
    }
    if x_val.rows == 0 {
        return Err(Error::EmptyDataset("validation set"));
    }
    if x_train.rows < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 samples".into()));
    }
    if y_train.len() != x_train.rows || y_val.len() != x_val.rows || x_val.cols != x_train.cols {
        return Err(Error::Shape("features and targets disagree".into()));
    }

    let mut state = init_with_input(config, x_train.cols, config.seed)?;
    let mut order: Vec<usize> = (0..x_train.rows).collect();
    let bounds = batches(x_train.rows, config.batch_size);

    let mut report = TrainReport {
        epochs_run: 0,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
    };
    let mut best: Option<MlpState> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.max_epochs {
        let mut rng = seed::rng_at(config.seed, &[EPOCH_STREAM, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for range in &bounds {
            let idx = &order[range.clone()];
            let xb = x_train.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            let cache = state.forward_train(&xb, &mut rng)?;
            epoch_loss += mse(&cache.predictions, &yb) * idx.len() as f64;
            let grads = state.backward(&cache, &yb)?;
            state.absorb_batch_stats(&cache);
            state.adam_step(&grads, config.learning_rate)?;
        }
        report.train_loss.push(epoch_loss / x_train.rows as f64);

        let val = mse(&state.forward_infer(x_val)?, y_val);
        report.val_loss.push(val);
        report.epochs_run = epoch + 1;

        if best.is_none() || val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best = Some(state.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let state = best.unwrap_or(state);
    Ok((state, report))
}
