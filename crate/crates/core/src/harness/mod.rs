//! End-to-end commands: frame solving, training with checkpoints,
//! evaluation, sweeps and mapping curves. The CLI is a thin layer over
//! these functions.

mod commands;
mod config;
mod stats;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::frame::FrameError;
use crate::hierarchy::ParseError;
use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::nn::ModelError;
use crate::synth::SynthError;

pub use commands::{
    cmd_curves, cmd_eval, cmd_solve, cmd_sweep, cmd_train, curves_csv, EvalOutput, SolveOutput, SweepCell,
    SweepTable, TrainOutput,
};
pub use config::{DataSource, RunConfig, SynthSpec};
pub use stats::{student_t_quantile, summarize, MetricSummary, SeedSummary};
pub use train::{
    build_head, load_hierarchy, prepare, train_seed, Checkpoint, EpochRecord, Head, Prepared, RunRecord,
    CHECKPOINT_FORMAT,
};

/// Process exit codes.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("hierarchy: {0}")]
    Hierarchy(#[from] ParseError),
    #[error("data: {0}")]
    Data(String),
    #[error("synthetic data: {0}")]
    Synth(#[from] SynthError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("loss: {0}")]
    Loss(#[from] LossError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("non-finite training loss at epoch {epoch} (seed {seed}); last good checkpoint kept")]
    NonFiniteLoss { epoch: usize, seed: u64 },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        use exit_code::*;
        match self {
            HarnessError::Config(_) => USAGE,
            HarnessError::Io { .. } | HarnessError::Hierarchy(_) | HarnessError::Data(_) | HarnessError::Synth(_) => {
                DATA
            }
            HarnessError::Frame(FrameError::InvalidParams(_)) => USAGE,
            HarnessError::Frame(FrameError::TooFewClasses { .. }) => DATA,
            HarnessError::Frame(_) => NUMERIC,
            HarnessError::Model(ModelError::DimensionMismatch(_) | ModelError::InvalidConfig(_)) => DATA,
            HarnessError::Model(_) => NUMERIC,
            HarnessError::Loss(LossError::InvalidAlpha(_)) => USAGE,
            HarnessError::Loss(LossError::LabelOutOfRange { .. } | LossError::LengthMismatch { .. }) => DATA,
            HarnessError::Loss(_) => NUMERIC,
            HarnessError::Metrics(MetricsError::NonFinite(_) | MetricsError::ZeroVector(_) | MetricsError::ZeroMeans) => {
                NUMERIC
            }
            HarnessError::Metrics(MetricsError::KTooLarge { .. } | MetricsError::KZero) => USAGE,
            HarnessError::Metrics(_) => DATA,
            HarnessError::NonFiniteLoss { .. } => NUMERIC,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_error(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(io_error(path))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, &text)
}
