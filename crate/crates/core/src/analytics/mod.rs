//! Trough-level variability and cohort statistics, with self-contained numerics.

use thiserror::Error;

pub mod correlation;
pub mod cv;
pub mod logistic;
pub mod report;
pub mod special;
pub mod welch;

pub use correlation::{mid_ranks, pearson_correlation, spearman_correlation};
pub use cv::{coefficient_of_variation, cv_of, CvResult, LabSeries};
pub use logistic::{fit_logistic, LogisticFit};
pub use report::{cohort_report, ArmLabels, Cell, CohortRecord, CohortReport};
pub use special::student_t_sf;
pub use welch::{welch_t_test, WelchTest};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("complete separation: {0}")]
    Separation(String),
    #[error("undefined correlation: {0}")]
    Undefined(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}
