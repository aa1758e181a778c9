use thiserror::Error;

use crate::scenarios::AssumptionReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("output index {index} out of range for {len} outputs")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("linear system for initial parameters has no solution (residual norm {residual:.3e})")]
    Solver { residual: f64 },

    #[error("non-finite value at step {step}: {what}")]
    Integration { step: u64, what: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("scenario construction failed: {0}")]
    Construction(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("assumptions of {} do not hold", .0.theorem)]
    AssumptionsFailed(Box<AssumptionReport>),

    #[error("metric error: {0}")]
    Metric(String),
}
