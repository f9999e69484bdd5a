//! Derived statistics and session reporting.

mod report;
mod stats;

use thiserror::Error;

pub use report::{session_report, write_coincidence_matrix_csv, write_report_csvs, EpochStats, SessionReport};
pub use stats::{
    apriori_bias, chsh, chsh_from_matrix, correlation_from_counts, qber_decompose, visibilities, Bias, ChshResult,
    QberComponents, TABLE3,
};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no same-basis coincidences")]
    NoSameBasis,
    #[error("empty {0} sub-block")]
    EmptyBlock(&'static str),
    #[error("matrix has no counts")]
    EmptyMatrix,
    #[error("no epochs to report")]
    NoEpochs,
}
