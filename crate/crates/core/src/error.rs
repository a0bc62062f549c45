use thiserror::Error;

/// Errors shared across the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical precondition was violated (non-positive time step,
    /// argument outside the operator's domain, and so on).
    #[error("domain error: {0}")]
    Domain(String),

    /// Grid construction or grid compatibility failure.
    #[error("grid error: {0}")]
    Grid(String),

    /// A field contained NaN or infinite entries where finite data is required.
    #[error("non-finite data: {0}")]
    NonFinite(String),

    /// The nonlinear source produced NaN/overflow during a Picard sweep.
    #[error("blow-up signal at t = {time}: {detail}")]
    BlowupSignal { time: f64, detail: String },

    /// An iterate left the admissible tube (twice the starting C1 norm).
    #[error("iterate bound exceeded at t = {time}: norm {norm:.6e} > limit {limit:.6e}")]
    BoundExceeded { time: f64, norm: f64, limit: f64 },

    /// The Picard sweep failed to contract within the iteration budget.
    #[error("no contraction on window starting at t = {window_start}: last gap ratio {ratio:.3}")]
    NoContraction { window_start: f64, ratio: f64 },

    /// A discretized solve failed (conditioning, divergence of the linear solver).
    #[error("solver failure: {0}")]
    Solver(String),

    /// Domain truncation was not converged at the requested tolerance.
    #[error("truncation not converged: {0}")]
    Truncation(String),

    /// Cache or export I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted kernel table failed validation against its header.
    #[error("cache format error: {0}")]
    CacheFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn grid(msg: impl Into<String>) -> Self {
        Error::Grid(msg.into())
    }
}
