use alloc::string::String;

/// Errors reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input data violates a structural requirement.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A row of a transition matrix does not sum to one.
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    /// The directed graph of the matrix is not strongly connected.
    #[error("matrix is reducible")]
    Reducible,
    /// Quadrature did not settle after the largest rule.
    #[error("quadrature did not converge: last two estimates {previous} and {last} ({nodes} nodes)")]
    Quadrature { previous: f64, last: f64, nodes: usize },
    /// A guarded numerical step failed.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// The fixed-point search produced no admissible solution.
    #[error("fixed-point solver failed: {0}")]
    Solver(String),
    /// The routine was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Exact enumeration would exceed the configured budget.
    #[error("enumeration of {configurations} configurations exceeds the budget of {budget}; use a sampled method")]
    Budget { configurations: f64, budget: usize },
    /// The model family is not handled by this routine.
    #[error("unsupported model: {0}")]
    Unsupported(String),
    /// State became non-finite during an iterative algorithm.
    #[error("non-finite state at iteration {iteration}")]
    NonFinite { iteration: usize },
    /// Rate-function ascent diverged past the cap.
    #[error("target outside the feasible set (objective exceeded {cap})")]
    Infeasible { cap: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
