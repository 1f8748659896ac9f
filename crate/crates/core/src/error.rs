use thiserror::Error;

/// Errors raised by the discretization, the solvers and the scenario layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: {nx}x{ny} nodes (need at least 3x3)")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field has nonzero boundary values (max |value| = {max_abs:e})")]
    NotDirichlet { max_abs: f64 },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("non-positive depth {value} at node ({i}, {j}); the depth must stay bounded away from zero")]
    NonPositiveDepth { i: usize, j: usize, value: f64 },

    #[error("time grid mismatch: expected {expected} snapshots, found {found}")]
    TimeGridMismatch { expected: usize, found: usize },

    #[error("time step {dt:e} exceeds the CFL bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("field file error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the inputs rather than by a solve.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::CgNotConverged { .. } | Error::NonFinite(_) | Error::Io(_) | Error::Csv(_)
        )
    }
}
