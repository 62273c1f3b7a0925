//! Experiment orchestration, data generation, benchmarking and reporting.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod synthetic;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::attack::AttackError;
use crate::defense::DefenseError;
use crate::tensor::TensorError;
use crate::vfl::VflError;

pub use bench::{bench_defense_scaling, loglog_slope, BenchPoint};
pub use config::{DatasetSource, ExperimentConfig, ModelConfig};
pub use experiment::ExperimentRecord;
pub use experiment::{ablate, run_experiment};
pub use synthetic::{make_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(VflError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report format: {0}")]
    Format(String),
    #[error(transparent)]
    Vfl(#[from] VflError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Training,
    Io,
    Other,
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> FailureKind {
        match self {
            HarnessError::Config(_) => FailureKind::Config,
            HarnessError::Training(_) => FailureKind::Training,
            HarnessError::Io { .. } | HarnessError::Format(_) => FailureKind::Io,
            HarnessError::Vfl(VflError::Io(_) | VflError::Csv(_) | VflError::CsvCell { .. })
            | HarnessError::Tensor(
                TensorError::Io(_)
                | TensorError::Json(_)
                | TensorError::UnsupportedCheckpoint { .. },
            ) => FailureKind::Io,
            HarnessError::Vfl(VflError::InvalidSplit(_) | VflError::InvalidDataset(_)) => {
                FailureKind::Config
            }
            HarnessError::Vfl(VflError::Divergence { .. }) => FailureKind::Training,
            _ => FailureKind::Other,
        }
    }
}
