use std::path::PathBuf;

use crate::numerics::Shape;

pub type Result<T> = std::result::Result<T, DmbaError>;

#[derive(Debug, thiserror::Error)]
pub enum DmbaError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("kernel {kernel} does not fit inside image {image}")]
    KernelTooLarge { kernel: Shape, image: Shape },

    #[error("kernel extent must be odd, got {height}x{width}")]
    EvenKernel { height: usize, width: usize },

    #[error("step size gamma must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("conjugate gradient did not reach tolerance {tol:e} in {iterations} iterations (relative residual {residual:e})")]
    MaxIterationsExceeded {
        iterations: usize,
        tol: f64,
        residual: f64,
    },

    #[error("adjoint solve did not converge: residual {residual:e} > tol {tol:e} after {iterations} iterations")]
    AdjointSolveDiverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("sampling ratio {target} cannot be reached (achieved {achieved})")]
    UnreachableRatio { target: f64, achieved: f64 },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("missing data: {0}")]
    MissingData(PathBuf),

    #[error("duplicate parameter block name `{0}`")]
    DuplicateParam(String),

    #[error("tape has no recorded input")]
    EmptyTape,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DmbaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmbaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: Shape, found: Shape) -> Self {
        DmbaError::ShapeMismatch { expected, found }
    }
}
