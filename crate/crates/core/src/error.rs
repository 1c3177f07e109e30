use thiserror::Error;

use crate::conic::SolverStatus;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the domain of a conversion or model function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A cone angle is too close to 0 or π for its derivative to exist.
    #[error("degenerate geometry: |sin ψ| = {sin_psi:e} at sensor {sensor}")]
    DegenerateGeometry { sensor: usize, sin_psi: f64 },

    #[error("singular Fisher information (condition number {condition:e})")]
    SingularFim { condition: f64 },

    #[error("conic solver ended with status {status:?}")]
    Solver { status: SolverStatus },

    #[error("eigen-recovery degenerate: {0}")]
    Degenerate(String),

    #[error("rejection sampling gave up after {draws} draws")]
    RejectionOverflow { draws: usize },

    #[error("Gauss-Newton diverged after {iterations} iterations")]
    Divergence { iterations: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
