use std::io;
use std::path::Path;

use wallhack_core::dataset::DatasetError;
use wallhack_core::ingest::IngestError;
use wallhack_core::linksim::{CalibrationError, ConfigError, SimError};
use wallhack_core::model::ModelError;
use wallhack_monitor::MonitorError;

/// Process exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, missing files, refused overwrite.
    Usage = 1,
    /// Input that exists but cannot be used.
    Data = 2,
    Internal = 3,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Internal,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Missing inputs are usage errors; anything else is a data problem.
pub fn io_error(path: &Path, e: io::Error) -> CliError {
    let message = format!("{}: {e}", path.display());
    match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied | io::ErrorKind::AlreadyExists => {
            CliError::usage(message)
        }
        _ => CliError::data(message),
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match &e {
            DatasetError::Io { path, source } => io_error(path, io::Error::new(source.kind(), source.to_string())),
            DatasetError::NoSessions | DatasetError::OutputExists(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Dataset(inner) => inner.into(),
            ModelError::Io(inner) => CliError::data(inner.to_string()),
            ModelError::InvalidConfig(_) | ModelError::TooFewRuns(_) => CliError::usage(e.to_string()),
            ModelError::Checkpoint { ref path, .. } if !path.exists() => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) | ConfigError::UnknownPreset(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(inner) => inner.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Config(inner) => inner.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Bind { .. } => CliError::data(e.to_string()),
            MonitorError::InvalidConfig(_) | MonitorError::Source { .. } => CliError::usage(e.to_string()),
            MonitorError::Serve(_) | MonitorError::Internal(_) => CliError::internal(e.to_string()),
        }
    }
}
