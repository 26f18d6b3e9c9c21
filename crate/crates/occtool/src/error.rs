use std::path::PathBuf;

use occ_core::aliasing::AliasingError;
use occ_core::image::ImageError;
use occ_core::power::PowerError;
use occ_core::reader::{ReaderError, SourceError};
use occ_core::sim::SimError;

use crate::config::ConfigError;
use crate::trace::TraceError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Aliasing(#[from] AliasingError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// A closed stdout, as when piping into `head`.
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Output(e) if e.kind() == std::io::ErrorKind::BrokenPipe)
    }
}
