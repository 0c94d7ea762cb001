//! Classification metrics, run aggregation and significance testing.
//!
//! Accuracy is the share of correctly classified paragraphs; precision,
//! recall and F1 are computed per class from a gold × predicted confusion
//! matrix. Paired systems are compared with an approximate randomization
//! test that swaps their predictions sample by sample.

mod aggregate;
mod metrics;
mod significance;

pub use aggregate::{aggregate_runs, MetricSummary, RunSummary};
pub use metrics::{compute_metrics, metrics_from_indices, ClassMetrics, MetricsReport, RunMetadata};
pub use significance::{approx_randomization_test, Metric, DEFAULT_ROUNDS, SIGNIFICANCE_LEVEL};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} gold labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("need at least two runs to aggregate, got {0}")]
    TooFewRuns(usize),
    #[error("runs do not share one stratum: {0}")]
    MixedStrata(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
