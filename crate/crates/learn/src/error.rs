use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error(transparent)]
    Autodiff(#[from] dmn_autodiff::AutodiffError),
    #[error(transparent)]
    Core(#[from] dmn_core::CoreError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("all {} candidates diverged: {}", .0.len(), .0.join("; "))]
    AllDiverged(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LearnError>;
