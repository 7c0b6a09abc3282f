//! A common fit/predict contract over every model family, used by the
//! cross-validation harness and the benchmark.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{pls_fit, pls_predict, rfr_fit, rfr_predict, ForestModel, ForestParams, PlsModel};
use crate::dataset::{Dataset, NormalizationSpec, DRYING_TIME};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mlp::{self, MlpConfig, MlpState};
use crate::seed;
use crate::thinlayer::{fit_dataset, FitOptions, FitResult, ThinLayerFamily};

/// A model trained on one normalized training portion.
pub trait FittedModel: Send + Sync {
    /// Estimates on the normalized MC scale for a dataset normalized with the
    /// same spec the model was trained under.
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>>;

    /// False for thin-layer fits that hit the iteration cap.
    fn converged(&self) -> bool {
        true
    }
}

/// Something that can be trained on a normalized dataset.
pub trait ModelSpec: Send + Sync {
    fn name(&self) -> String;

    /// `train` is normalized with `norm`; `seed` drives any randomness.
    fn fit(&self, train: &Dataset, norm: &NormalizationSpec, seed: u64) -> Result<Box<dyn FittedModel>>;
}

fn require_normalized(d: &Dataset) -> Result<()> {
    if d.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized)
    }
}

/// Predicts the training target mean. Useful as a floor and in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanModel;

struct Constant(f64);

impl FittedModel for Constant {
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        Ok(vec![self.0; d.len()])
    }
}

impl ModelSpec for MeanModel {
    fn name(&self) -> String {
        "mean".into()
    }

    fn fit(&self, train: &Dataset, _: &NormalizationSpec, _: u64) -> Result<Box<dyn FittedModel>> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("training set"));
        }
        let y = train.targets();
        Ok(Box::new(Constant(y.iter().sum::<f64>() / y.len() as f64)))
    }
}

/// A thin-layer curve over raw drying time (minutes), fit against the
/// normalized MC divided by 100.
#[derive(Debug, Clone)]
pub struct ThinLayerModel {
    pub family: ThinLayerFamily,
    pub options: FitOptions,
}

pub struct FittedThinLayer {
    pub fit: FitResult,
    norm: NormalizationSpec,
}

fn raw_times(d: &Dataset, norm: &NormalizationSpec) -> Dataset {
    let samples = d
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.features.0[DRYING_TIME] = norm.features[DRYING_TIME].denormalize(s.features.0[DRYING_TIME]);
            s
        })
        .collect();
    Dataset::new(samples)
}

impl FittedModel for FittedThinLayer {
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        require_normalized(d)?;
        Ok(raw_times(d, &self.norm)
            .iter()
            .map(|s| 100.0 * self.fit.predict_ratio(s.features.drying_time().max(0.0)))
            .collect())
    }

    fn converged(&self) -> bool {
        self.fit.converged
    }
}

impl ModelSpec for ThinLayerModel {
    fn name(&self) -> String {
        self.family.key().into()
    }

    fn fit(&self, train: &Dataset, norm: &NormalizationSpec, _: u64) -> Result<Box<dyn FittedModel>> {
        require_normalized(train)?;
        let fit = fit_dataset(self.family, &raw_times(train, norm), &self.options, Exec::Serial)?;
        Ok(Box::new(FittedThinLayer {
            fit,
            norm: norm.clone(),
        }))
    }
}

/// The MLP regressor. Each fit carves a shuffled 80/20 train/validation split
/// from its training portion for early stopping.
#[derive(Debug, Clone)]
pub struct AnnModel {
    pub config: MlpConfig,
    pub val_fraction: f64,
}

impl AnnModel {
    pub fn new(config: MlpConfig) -> Self {
        AnnModel {
            config,
            val_fraction: 0.2,
        }
    }
}

/// Shuffled train/validation index split; the validation part holds
/// `round(n * fraction)` rows, at least one, leaving at least two to train on.
pub fn train_val_split(n: usize, fraction: f64, seed_value: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "a train/validation split needs at least 3 samples, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng_at(seed_value, &[0x5917]));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 2);
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

pub struct FittedAnn {
    pub state: MlpState,
    pub report: mlp::TrainReport,
}

impl FittedModel for FittedAnn {
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        require_normalized(d)?;
        Ok(mlp::predict(&self.state, d))
    }
}

impl ModelSpec for AnnModel {
    fn name(&self) -> String {
        "ann".into()
    }

    fn fit(&self, train: &Dataset, _: &NormalizationSpec, seed_value: u64) -> Result<Box<dyn FittedModel>> {
        require_normalized(train)?;
        let (tr, va) = train_val_split(train.len(), self.val_fraction, seed_value)?;
        let config = MlpConfig {
            seed: seed_value,
            ..self.config.clone()
        };
        let (state, report) = mlp::train(&config, &train.subset(&tr), &train.subset(&va))?;
        Ok(Box::new(FittedAnn { state, report }))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlsSpec {
    pub n_components: usize,
}

impl Default for PlsSpec {
    fn default() -> Self {
        PlsSpec { n_components: 5 }
    }
}

impl FittedModel for PlsModel {
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        pls_predict(self, &d.feature_rows())
    }
}

impl ModelSpec for PlsSpec {
    fn name(&self) -> String {
        "pls".into()
    }

    fn fit(&self, train: &Dataset, _: &NormalizationSpec, _: u64) -> Result<Box<dyn FittedModel>> {
        require_normalized(train)?;
        Ok(Box::new(pls_fit(&train.feature_rows(), &train.targets(), self.n_components)?))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RfrSpec {
    pub params: ForestParams,
}

impl FittedModel for ForestModel {
    fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        rfr_predict(self, &d.feature_rows())
    }
}

impl ModelSpec for RfrSpec {
    fn name(&self) -> String {
        "rfr".into()
    }

    fn fit(&self, train: &Dataset, _: &NormalizationSpec, seed_value: u64) -> Result<Box<dyn FittedModel>> {
        require_normalized(train)?;
        Ok(Box::new(rfr_fit(
            &train.feature_rows(),
            &train.targets(),
            self.params,
            seed_value,
            Exec::Serial,
        )?))
    }
}

/// Model names accepted on the command line and in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    ThinLayer(ThinLayerFamily),
    Ann,
    Pls,
    Rfr,
    Mean,
}

impl ModelKind {
    /// The six thin-layer families, then ANN, PLS and RFR.
    pub fn benchmark_set() -> Vec<ModelKind> {
        ThinLayerFamily::ALL
            .iter()
            .map(|&f| ModelKind::ThinLayer(f))
            .chain([ModelKind::Ann, ModelKind::Pls, ModelKind::Rfr])
            .collect()
    }

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::ThinLayer(f) => f.key(),
            ModelKind::Ann => "ann",
            ModelKind::Pls => "pls",
            ModelKind::Rfr => "rfr",
            ModelKind::Mean => "mean",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ann" | "mlp" => Ok(ModelKind::Ann),
            "pls" => Ok(ModelKind::Pls),
            "rfr" | "forest" => Ok(ModelKind::Rfr),
            "mean" => Ok(ModelKind::Mean),
            other => other
                .parse::<ThinLayerFamily>()
                .map(ModelKind::ThinLayer)
                .map_err(|_| Error::InvalidArgument(format!("unknown model '{s}'"))),
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.key().into()
    }
}

/// Hyperparameters shared by the model builders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub mlp: MlpConfig,
    pub thinlayer: FitOptions,
    pub pls_components: Option<usize>,
    pub forest: ForestParams,
}

pub fn build_model(kind: ModelKind, opts: &ModelOptions) -> Box<dyn ModelSpec> {
    match kind {
        ModelKind::ThinLayer(family) => Box::new(ThinLayerModel {
            family,
            options: opts.thinlayer.clone(),
        }),
        ModelKind::Ann => Box::new(AnnModel::new(opts.mlp.clone())),
        ModelKind::Pls => Box::new(PlsSpec {
            n_components: opts.pls_components.unwrap_or(5),
        }),
        ModelKind::Rfr => Box::new(RfrSpec { params: opts.forest }),
        ModelKind::Mean => Box::new(MeanModel),
    }
}
