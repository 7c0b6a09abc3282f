//! Run configuration: a JSON file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use drycurve::dataset::SynthConfig;
use drycurve::evaluation::{CvConfig, Regime};
use drycurve::hpo::{AshaConfig, SearchSpace};
use drycurve::models::{ModelKind, ModelOptions};
use drycurve::thinlayer::ThinLayerFamily;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollingConfig {
    pub drying_time_half_width: f64,
    pub estimate_half_width: f64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            drying_time_half_width: 8.0,
            estimate_half_width: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    Pls,
    Rfr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub family: ThinLayerFamily,
    /// Fit thin-layer curves to the min-max normalized MC instead of raw MC.
    pub normalize_target: bool,
    pub regime: Regime,
    pub baseline: BaselineKind,
    pub models: Vec<ModelKind>,
    pub regimes: Vec<Regime>,
    pub cv: CvConfig,
    pub model_options: ModelOptions,
    pub val_fraction: f64,
    pub asha: AshaConfig,
    pub space: SearchSpace,
    pub rolling: RollingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            seed: None,
            synth: SynthConfig::default(),
            family: ThinLayerFamily::Lewis,
            normalize_target: false,
            regime: Regime::Wic,
            baseline: BaselineKind::Pls,
            models: ModelKind::benchmark_set(),
            regimes: vec![Regime::Wic, Regime::Nic],
            cv: CvConfig::default(),
            model_options: ModelOptions::default(),
            val_fraction: 0.2,
            asha: AshaConfig::default(),
            space: SearchSpace::default(),
            rolling: RollingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Usage("no input file given (argument or \"input\" in the config)".into()))
    }

    /// Flag, then config file, then `DRYCURVE_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = match (flag, self.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => match std::env::var("DRYCURVE_SEED") {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("DRYCURVE_SEED is not an unsigned integer: {v:?}")))?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }
}

#[derive(Serialize)]
pub struct Echo<'a> {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
}
