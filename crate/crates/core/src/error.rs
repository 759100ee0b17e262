use std::path::PathBuf;

use crate::cdr::TowerId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid dataset span: {0}")]
    InvalidSpan(String),

    #[error("tower registry, line {line}: {reason}")]
    Registry { line: usize, reason: String },

    #[error("record line {line} references unknown tower {tower}")]
    UnknownTower { line: usize, tower: TowerId },

    #[error("assignment references unregistered tower {0}")]
    UnregisteredTower(TowerId),

    #[error("partition count must be at least 1")]
    ZeroPartitions,

    #[error("unknown timezone {0:?}")]
    Timezone(String),

    #[error("invalid HDA spec {spec:?}: {reason}")]
    HdaSpec { spec: String, reason: String },

    #[error("invalid window: {0}")]
    Window(String),

    #[error("config: {0}")]
    Config(String),

    #[error("synthetic generator: {0}")]
    Synth(String),

    #[error("user {0} missing from ground truth")]
    MissingTruth(u64),

    #[error("sweep: {0}")]
    Sweep(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
