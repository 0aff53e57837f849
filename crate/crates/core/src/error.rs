use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("capacity exceeded: {what} needs {required_bytes} bytes, cap is {cap_bytes} bytes")]
    Capacity {
        what: String,
        required_bytes: u64,
        cap_bytes: u64,
    },

    #[error("no steady state found (no eigenvalue with |lambda| < {tol_zero:e})")]
    NoSteadyState { tol_zero: f64 },

    #[error("degenerate steady sector: {count} eigenvalues with |lambda| < {tol_zero:e}")]
    DegenerateSteadySector { count: usize, tol_zero: f64 },

    #[error("impossible jump on channel {channel}: total overlap {weight:e} is below threshold")]
    ImpossibleJump { channel: usize, weight: f64 },

    #[error("rank deficiency after propagation: |R_kk| = {value:e} in column {column}")]
    RankDeficient { column: usize, value: f64 },

    #[error("trajectory {trajectory_id} failed at step {step}: {source}")]
    Trajectory {
        trajectory_id: u64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("residual check failed: {what} residual {residual:e} exceeds {tolerance:e}")]
    Residual {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("mismatched time grids: {0}")]
    GridMismatch(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }

    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Capacity { .. })
    }
}
