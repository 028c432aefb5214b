//! Monte Carlo experiments over the fusion pipelines, weight comparisons,
//! privacy sweeps and CSV output.

mod config;
mod experiment;
mod report;

pub use config::{load_config, ExperimentConfig};
pub use experiment::{compare_weights, run_experiment, sweep, MseReport, MseRow, SweepRow, WeightTable};
pub use report::{emit_csv, write_csv, write_sweep_csv, write_weight_csv};

use std::path::PathBuf;

use thiserror::Error;

use crate::fusion::FusionError;
use crate::model::ModelError;
use crate::privacy::PrivacyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("run {run}: {source}")]
    Run {
        run: u64,
        #[source]
        source: FusionError,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}
