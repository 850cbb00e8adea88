use std::path::Path;

use prescription_ar::OpticsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for anything wrong with the inputs, 2 when the design itself
    /// cannot be completed.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Optics(e) => match e {
                OpticsError::InvalidInput(_)
                | OpticsError::InvalidPrescription(_)
                | OpticsError::UnknownMaterial(_)
                | OpticsError::OutOfBand(_) => 1,
                _ => 2,
            },
        }
    }
}
