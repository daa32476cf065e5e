use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("rank {requested} exceeds numerical rank {numerical} of the snapshot matrix")]
    RankDeficient { requested: usize, numerical: usize },

    #[error("index {index} out of range (valid: {lo}..={hi})")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("search would evaluate {count} subsets, above the budget of {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("riccati iteration did not converge after {iterations} iterations (relative change {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },

    #[error("system is not stable: spectral radius {0}")]
    Unstable(f64),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::IndexOutOfRange { .. }
                | Error::BudgetExceeded { .. }
                | Error::RankDeficient { .. }
                | Error::InsufficientData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
