use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Run {
        path: PathBuf,
        #[source]
        source: meroput::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: converge.pairs must share k/n, but {a:?} and {b:?} differ")]
    RatioMismatch { path: PathBuf, a: (usize, usize), b: (usize, usize) },

    #[error("{path}: {failed} oracle gate(s) failed, see report.txt")]
    Gate { path: PathBuf, failed: usize },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Run { source, .. } => source.category(),
            CliError::Io { .. } => "io",
            CliError::RatioMismatch { .. } => "config",
            CliError::Gate { .. } => "gate",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "domain" => 3,
            "spectral" => 4,
            "recursion" => 5,
            "oracle" => 6,
            "io" => 7,
            "gate" => 8,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
