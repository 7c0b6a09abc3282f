//! `drycurve`: batch front end for moisture-content estimation runs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "drycurve", version, about = "Moisture-content estimation toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config, then DRYCURVE_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset CSV and summarize it.
    Validate {
        input: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        n_experiments: Option<usize>,
    },
    /// Fit a thin-layer drying curve to a dataset.
    FitThinlayer {
        input: Option<PathBuf>,
        #[arg(long)]
        family: Option<String>,
    },
    /// Train the MLP regressor.
    TrainAnn {
        input: Option<PathBuf>,
        /// Comma-separated hidden layer widths.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        regime: Option<String>,
    },
    /// Train a PLS or random-forest baseline.
    TrainBaseline {
        input: Option<PathBuf>,
        /// `pls` or `rfr`.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        regime: Option<String>,
    },
    /// Repeated k-fold cross-validation of several models and regimes.
    Benchmark {
        input: Option<PathBuf>,
        /// Comma-separated model names.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Comma-separated regimes (WIC, NIC).
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<String>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// ASHA search over the MLP search space, one search per depth.
    Hpo {
        input: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    let mut cfg = config::RunConfig::load(common.config.as_deref())?;
    let seed = cfg.resolve_seed(common.seed)?;
    let workers = match common.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let exec = if workers > 1 { drycurve::Exec::Parallel } else { drycurve::Exec::Serial };
    let ctx = commands::Context { seed, exec, out: common.out };

    pool.install(|| match cli.command {
        Command::Validate { input } => {
            commands::set_input(&mut cfg, input);
            commands::validate(&cfg, &ctx)
        }
        Command::Synth { n_experiments } => {
            if let Some(n) = n_experiments {
                cfg.synth.n_experiments = n;
            }
            commands::synth(&cfg, &ctx)
        }
        Command::FitThinlayer { input, family } => {
            commands::set_input(&mut cfg, input);
            if let Some(f) = family {
                cfg.family = f.parse().map_err(CliError::input)?;
            }
            commands::fit_thinlayer(&cfg, &ctx)
        }
        Command::TrainAnn { input, hidden, max_epochs, regime } => {
            commands::set_input(&mut cfg, input);
            if let Some(h) = hidden {
                cfg.model_options.mlp.hidden_sizes = h;
            }
            if let Some(e) = max_epochs {
                cfg.model_options.mlp.max_epochs = e;
            }
            if let Some(r) = regime {
                cfg.regime = r.parse().map_err(CliError::input)?;
            }
            commands::train_ann(&cfg, &ctx)
        }
        Command::TrainBaseline { input, model, regime } => {
            commands::set_input(&mut cfg, input);
            if let Some(m) = model {
                cfg.baseline = match m.to_ascii_lowercase().as_str() {
                    "pls" => config::BaselineKind::Pls,
                    "rfr" | "forest" => config::BaselineKind::Rfr,
                    _ => return Err(CliError::Usage(format!("unknown baseline '{m}' (expected pls or rfr)"))),
                };
            }
            if let Some(r) = regime {
                cfg.regime = r.parse().map_err(CliError::input)?;
            }
            commands::train_baseline(&cfg, &ctx)
        }
        Command::Benchmark { input, models, regimes, repeats, folds } => {
            commands::set_input(&mut cfg, input);
            if let Some(m) = models {
                cfg.models = m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(CliError::input)?;
            }
            if let Some(r) = regimes {
                cfg.regimes = r.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(CliError::input)?;
            }
            if let Some(r) = repeats {
                cfg.cv.repeats = r;
            }
            if let Some(k) = folds {
                cfg.cv.k = k;
            }
            commands::benchmark(&cfg, &ctx)
        }
        Command::Hpo { input, trials, depths } => {
            commands::set_input(&mut cfg, input);
            if let Some(t) = trials {
                cfg.asha.trials_per_depth = t;
            }
            if let Some(d) = depths {
                cfg.space.depths = d;
            }
            commands::hpo(&cfg, &ctx)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
