//! Error-rate estimation and cascade error correction.

mod cascade;
mod estimate;

use thiserror::Error;

pub use cascade::{
    answer_parity_queries, auto_block_size, block_sizes, cascade, cascade_bob, leakage_efficiency, Backtrack,
    CascadeConfig, CascadeOutcome, CascadePlan, LocalParityOracle, ParityOracle, ParityQuery, ReconcileReport,
};
pub use estimate::{estimate_error_rate, sample_indices, ErrorEstimate, ErrorRateTracker, EstimateMode};

#[derive(Debug, Error, PartialEq)]
pub enum ReconcileError {
    #[error("keys have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("key too short for estimation: {0} bits")]
    KeyTooShort(usize),
    #[error("parity query out of range: pass {pass}, [{start}, {end})")]
    QueryOutOfRange { pass: u8, start: u32, end: u32 },
    #[error("parity channel failed: {0}")]
    Channel(String),
    #[error("invalid cascade configuration: {0}")]
    InvalidConfig(String),
    #[error("error rate is zero; leakage efficiency undefined")]
    ZeroErrorRate,
}
