use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is not connected")]
    NotConnected,
    #[error("not a point of the simplex: {0}")]
    InvalidSimplex(String),
    #[error("negative input to {what}: {value}")]
    NegativeInput { what: &'static str, value: f64 },
    #[error("density {value:e} at vertex {vertex} is below the admissible floor {floor:e}")]
    BoundaryDensity { vertex: usize, value: f64, floor: f64 },
    #[error("density left the interior at t = {t} after {halvings} step halvings")]
    NonPositiveDensity { t: f64, halvings: u32 },
    #[error("no convergence after {iterations} iterations (last gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("homotopy failed at lambda = {lambda}: {source}")]
    HomotopyFailed {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("shooting matrix is numerically singular (condition number {cond:e})")]
    SingularShooting { cond: f64 },
    #[error("line search stalled at iteration {iteration} with objective {objective}")]
    LineSearchStall { iteration: usize, objective: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
