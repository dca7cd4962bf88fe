use thiserror::Error;

use crate::sdp::SolveStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameters outside the regime of this formula: {0}")]
    OutOfRegime(String),
    #[error("epsilon {0} outside the admissible interval")]
    BadEpsilon(f64),
    #[error("singular optimal step-size: an epsilon > 0 is required")]
    SingularOptimalStep,
    #[error("magnitude overflow: {0}")]
    Overflow(String),
    #[error("aggregate linear term is not in the range of the aggregate Hessian")]
    NoMinimizer,
    #[error("batch size {b} outside [1, {n}]")]
    BadBatch { b: usize, n: usize },
    #[error("invalid sampling distribution: {0}")]
    BadDistribution(String),
    #[error("interpolation constraint degenerates when mu = L")]
    DegenerateClass,
    #[error("SDP solver failed with status {0:?}")]
    SolverFailure(SolveStatus),
    #[error("program infeasible: {0}")]
    Infeasible(String),
    #[error("certificate is not dual feasible")]
    NotFeasible,
    #[error("enumeration of {0} paths exceeds the cap")]
    TooLarge(u128),
    #[error("component has no closed-form proximal map")]
    NoProx,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
