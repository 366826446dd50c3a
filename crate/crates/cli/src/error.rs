use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;
use versatune_core::detector::DetectError;
use versatune_core::metrics::MetricsError;
use versatune_core::mixer::MixError;
use versatune_core::scheduler::ScheduleError;
use versatune_core::simulator::SimError;
use versatune_core::DistError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_EXTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Detect(e) if e.is_external() => EXIT_EXTERNAL,
            _ => EXIT_DATA,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> CliError + '_ {
        move |e| CliError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
