use std::path::PathBuf;

use muacp::sim::LogError;
use muacp::ScenarioError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: LogError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot encode {what}: {source}")]
    Encode { what: &'static str, source: serde_json::Error },
    #[error("bad --seeds value {0:?}: expected N or a..b")]
    Seeds(String),
    #[error("bad value list for --{flag}: {value:?}")]
    Grid { flag: &'static str, value: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
