use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// An iterative decomposition did not converge within its cap.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Cholesky broke down; `pivot` is the smallest pivot encountered.
    #[error("rank-deficient Gram matrix: pivot {pivot:e} at index {index}")]
    RankDeficient { index: usize, pivot: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Target is outside the range reachable through singular Gram roots.
    #[error("range error: relative reconstruction error {rel_err:e}")]
    Range { rel_err: f64 },

    #[error("training diverged at step {step} (train loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("no convergence after {iterations} iterations (primal {primal:e}, dual {dual:e})")]
    NonConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
