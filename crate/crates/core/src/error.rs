use thiserror::Error;

use crate::archive::ArchiveError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::dynamics::DynamicsError;
use crate::graph::GraphError;
use crate::learner::LearnerError;
use crate::policy::PolicyError;
use crate::scm::ScmError;
use crate::stats::StatsError;
use crate::trainers::TrainerError;

/// Crate-level error; each module keeps its own error enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown environment '{0}'")]
    UnknownEnvironment(String),
    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),
    #[error("probe mode '{0}' is not available for this environment")]
    ProbeModeUnavailable(String),
    #[error("policy '{policy}' is not supported on environment '{env}'")]
    PolicyUnsupported { policy: String, env: String },
    #[error("run directory {0} contains no episode logs")]
    MissingLogs(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("selftest failed: {0}")]
    SelftestFailed(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
