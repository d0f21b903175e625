use std::path::PathBuf;

use devae_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Data(_) | LabError::Io { .. } => 3,
            LabError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Usage(_) => LabError::Config(e.to_string()),
            CoreError::Data(_) => LabError::Data(e.to_string()),
            CoreError::Numerical { .. } | CoreError::MetricUndefined(_) => LabError::Numerical(e.to_string()),
        }
    }
}
