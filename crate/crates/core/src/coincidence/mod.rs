//! Offset recovery, coincidence matching, click policies and sifting.

mod clicks;
mod matcher;
mod offset;
mod sift;

use thiserror::Error;

pub use clicks::{apply_click_policies, ClickConfig, ClickPolicy};
pub use matcher::{epoch_slice, find_coincidences, find_coincidence_indices, reference_coincidences};
pub use offset::{correlate, deskew, deskew_time, recover_offset, recover_offset_with, OffsetConfig, OffsetEstimate};
pub use sift::{sift, SiftResult, SIFT_CSV_HEADER};

/// Total coincidence window width in ticks (2 ns rounded to an odd count).
pub const DEFAULT_WINDOW: u64 = 13;

#[derive(Debug, Error, PartialEq)]
pub enum CoincidenceError {
    #[error("detection stream is empty")]
    EmptyStream,
    #[error("no significant correlation peak (confidence {confidence:.2})")]
    LockFailure { confidence: f64 },
}
