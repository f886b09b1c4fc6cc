use thiserror::Error;

/// Errors raised by the solvers, the kernel checks and the CLI plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("CFL violation: tau={tau:.3e} exceeds the monotone bound {bound:.3e}")]
    Cfl { tau: f64, bound: f64 },

    #[error("solver did not converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("discount ladder is not Cauchy: {0}")]
    NonCauchy(String),

    #[error("sup-norm bound violated: {0}")]
    BoundViolation(String),

    #[error("cell problem failed at slow node {node}: {source}")]
    CellAtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of an iterative solve rather than bad input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::NonCauchy(_)
            | Error::BoundViolation(_)
            | Error::Quadrature(_) => true,
            Error::CellAtNode { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
