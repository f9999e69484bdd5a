use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ReconcileError;
use crate::model::{hamming, KeyBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Reveal and discard a random tenth of the sifted key.
    Sample10Pct,
    /// Use the error rate measured on the previous epoch.
    PreviousBlock,
    /// Use the mean error rate of the last few epochs.
    #[default]
    RunningAverage,
}

impl std::str::FromStr for EstimateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sample_10pct" => Ok(EstimateMode::Sample10Pct),
            "previous_block" => Ok(EstimateMode::PreviousBlock),
            "running_average" => Ok(EstimateMode::RunningAverage),
            _ => Err(format!("unknown estimate mode {s:?}")),
        }
    }
}

/// Error rates measured by cascade on recent epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRateTracker {
    history: VecDeque<f64>,
    capacity: usize,
}

impl Default for ErrorRateTracker {
    fn default() -> Self {
        ErrorRateTracker::new(5)
    }
}

impl ErrorRateTracker {
    pub fn new(capacity: usize) -> Self {
        ErrorRateTracker { history: VecDeque::with_capacity(capacity), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, rate: f64) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(rate);
    }

    pub fn last(&self) -> Option<f64> {
        self.history.back().copied()
    }

    pub fn average(&self) -> Option<f64> {
        if self.history.is_empty() {
            None
        } else {
            Some(self.history.iter().sum::<f64>() / self.history.len() as f64)
        }
    }

    /// Stored rate for the given mode, if any. The sampling mode never uses
    /// stored rates.
    pub fn stored(&self, mode: EstimateMode) -> Option<f64> {
        match mode {
            EstimateMode::Sample10Pct => None,
            EstimateMode::PreviousBlock => self.last(),
            EstimateMode::RunningAverage => self.average(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    pub estimate: f64,
    pub remaining_alice: KeyBuffer,
    pub remaining_bob: KeyBuffer,
    pub revealed: usize,
}

/// Sorted positions revealed by the sampling mode: round(n / 10) of them.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let k = (n as f64 / 10.0).round() as usize;
    let mut idx = index::sample(rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

fn without(bits: &[bool], sorted_idx: &[usize]) -> Vec<bool> {
    let mut out = Vec::with_capacity(bits.len() - sorted_idx.len());
    let mut k = 0;
    for (i, &b) in bits.iter().enumerate() {
        if k < sorted_idx.len() && sorted_idx[k] == i {
            k += 1;
        } else {
            out.push(b);
        }
    }
    out
}

/// Estimates the error rate between the sifted keys. Stored-rate modes fall
/// back to sampling when no rate has been recorded yet.
pub fn estimate_error_rate<R: Rng + ?Sized>(
    alice: &KeyBuffer,
    bob: &KeyBuffer,
    mode: EstimateMode,
    tracker: &ErrorRateTracker,
    rng: &mut R,
) -> Result<ErrorEstimate, ReconcileError> {
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch(alice.len(), bob.len()));
    }
    if alice.len() < 10 {
        return Err(ReconcileError::KeyTooShort(alice.len()));
    }
    if let Some(rate) = tracker.stored(mode) {
        return Ok(ErrorEstimate { estimate: rate, remaining_alice: alice.clone(), remaining_bob: bob.clone(), revealed: 0 });
    }
    let idx = sample_indices(alice.len(), rng);
    let a: Vec<bool> = idx.iter().map(|&i| alice.bits[i]).collect();
    let b: Vec<bool> = idx.iter().map(|&i| bob.bits[i]).collect();
    let estimate = hamming(&a, &b) as f64 / idx.len() as f64;
    Ok(ErrorEstimate {
        estimate,
        remaining_alice: KeyBuffer { bits: without(&alice.bits, &idx), ..alice.clone() },
        remaining_bob: KeyBuffer { bits: without(&bob.bits, &idx), ..bob.clone() },
        revealed: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KeyStage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(bits: Vec<bool>) -> KeyBuffer {
        KeyBuffer::new(bits, KeyStage::Sifted, 1)
    }

    #[test]
    fn identical_keys_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = key((0..1000).map(|i| i % 3 == 0).collect());
        let e = estimate_error_rate(&k, &k, EstimateMode::Sample10Pct, &ErrorRateTracker::default(), &mut rng).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.revealed, 100);
        assert_eq!(e.remaining_alice.len(), 900);
        assert_eq!(e.remaining_alice, e.remaining_bob);
    }

    #[test]
    fn fifty_of_thousand_averages_five_percent() {
        // Hypergeometric: 100 draws from 1000 with 50 marked; the mean of
        // 200 trial estimates has standard error ~0.0015.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = key(vec![false; 1000]);
        let b = key((0..1000).map(|i| i % 20 == 0).collect());
        let mean = (0..200)
            .map(|_| {
                estimate_error_rate(&a, &b, EstimateMode::Sample10Pct, &ErrorRateTracker::default(), &mut rng)
                    .unwrap()
                    .estimate
            })
            .sum::<f64>()
            / 200.0;
        assert!((mean - 0.05).abs() < 0.015, "{mean}");
    }

    #[test]
    fn stored_rate_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = ErrorRateTracker::default();
        t.push(0.0492);
        let k = key(vec![true; 50]);
        let e = estimate_error_rate(&k, &k, EstimateMode::PreviousBlock, &t, &mut rng).unwrap();
        assert_eq!((e.estimate, e.revealed), (0.0492, 0));
        assert_eq!(e.remaining_alice.len(), 50);
    }

    #[test]
    fn empty_history_falls_back_to_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = key(vec![true; 50]);
        let e = estimate_error_rate(&k, &k, EstimateMode::RunningAverage, &ErrorRateTracker::default(), &mut rng)
            .unwrap();
        assert_eq!(e.revealed, 5);
    }

    #[test]
    fn short_key_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = key(vec![true; 9]);
        let r = estimate_error_rate(&k, &k, EstimateMode::Sample10Pct, &ErrorRateTracker::default(), &mut rng);
        assert_eq!(r.unwrap_err(), ReconcileError::KeyTooShort(9));
    }

    #[test]
    fn tracker_window() {
        let mut t = ErrorRateTracker::new(2);
        for r in [0.1, 0.2, 0.4] {
            t.push(r);
        }
        assert_eq!(t.last(), Some(0.4));
        assert!((t.average().unwrap() - 0.3).abs() < 1e-12);
    }
}
