use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("degenerate face {face}: repeated vertex index")]
    DegenerateFace { face: usize },

    #[error("face {face} references vertex {index}, but mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("vertex {0} is isolated (degree 0)")]
    IsolatedVertex(usize),

    #[error("face {0} has zero area")]
    ZeroAreaFace(usize),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("singular system at vertex {vertex}: {msg}")]
    Singular { vertex: usize, msg: String },

    #[error("degenerate deformation: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset too short: {0}")]
    DatasetTooShort(String),

    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: usize, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
