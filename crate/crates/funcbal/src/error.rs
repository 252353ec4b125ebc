use thiserror::Error;

/// Errors surfaced by the library. Data-shape problems (grids, ids,
/// dimensions) are kept distinct from numeric failures so the CLI can map
/// them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("base kernel mismatch: {0}")]
    KernelMismatch(String),

    #[error("representation mismatch: {0}")]
    RepresentationMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("element ({i}, {j}): {source}")]
    AtIndex {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage '{stage}': {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True when the error is about data shape or content rather than
    /// numerics (used for CLI exit-code mapping).
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::GridMismatch(_)
            | Error::KernelMismatch(_)
            | Error::RepresentationMismatch(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::Io(_)
            | Error::Parse { .. } => true,
            Error::AtIndex { source, .. } | Error::Stage { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
