use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("Gauss-Legendre table exhausted: requested {requested} points, table holds {max}")]
    TableExhausted { requested: usize, max: usize },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("Newton iteration aborted: Hessian is negative definite")]
    NewtonAbort,
    #[error("Newton iteration exceeded {0} iterations")]
    MaxIters(usize),
    #[error("GMRES failed to converge: {iterations} iterations, relative residual {residual:e}")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("trajectory format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
