//! Cascade error correction, Bob side driving, Alice side answering parity
//! queries.
//!
//! Each pass permutes the key (pass 0 only when `shuffle_before` is set),
//! cuts it into blocks of the pass's size and compares block parities.
//! Odd blocks are fixed by binary search over left halves. A corrected bit
//! changes the parity of the block holding it in every earlier pass; which
//! of those passes are revisited is set by the backtracking mode.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ReconcileError;
use crate::model::{h2, hamming, KeyBuffer, KeyStage};
use crate::seed::rng_for;

pub const MAX_BLOCK_SIZE: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backtrack {
    #[default]
    Full,
    FirstPassOnly,
}

impl std::str::FromStr for Backtrack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Backtrack::Full),
            "first_pass_only" | "first-pass-only" => Ok(Backtrack::FirstPassOnly),
            _ => Err(format!("unknown backtrack mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub passes: u32,
    /// Fixed first-pass block size; derived from the error estimate if unset.
    pub initial_block_size: Option<usize>,
    pub backtrack: Backtrack,
    pub estimate_mode: super::EstimateMode,
    pub shuffle_before: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            passes: 5,
            initial_block_size: None,
            backtrack: Backtrack::Full,
            estimate_mode: super::EstimateMode::RunningAverage,
            shuffle_before: true,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), ReconcileError> {
        if self.passes == 0 || self.passes > 32 {
            return Err(ReconcileError::InvalidConfig(format!("passes = {} must be in 1..=32", self.passes)));
        }
        if let Some(k) = self.initial_block_size {
            if k == 0 || k > MAX_BLOCK_SIZE {
                return Err(ReconcileError::InvalidConfig(format!("initial_block_size = {k} out of range")));
            }
        }
        Ok(())
    }
}

/// `round(0.73 / qber)` clamped to [4, 65536].
pub fn auto_block_size(qber_estimate: f64) -> usize {
    if !(qber_estimate > 0.0) {
        return MAX_BLOCK_SIZE;
    }
    (0.73 / qber_estimate).round().clamp(4.0, MAX_BLOCK_SIZE as f64) as usize
}

pub fn block_sizes(cfg: &CascadeConfig, qber_estimate: f64) -> Vec<usize> {
    let k1 = cfg.initial_block_size.unwrap_or_else(|| auto_block_size(qber_estimate));
    (0..cfg.passes).map(|i| k1.saturating_mul(1 << i.min(40))).collect()
}

/// Permutations and block sizes shared by both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadePlan {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    /// `perms[p][i]` is the key index at position `i` of pass `p`.
    pub perms: Vec<Vec<u32>>,
    inverse: Vec<Vec<u32>>,
}

impl CascadePlan {
    pub fn new(n: usize, cfg: &CascadeConfig, qber_estimate: f64, shuffle_seed: u64) -> Self {
        let block_sizes = block_sizes(cfg, qber_estimate);
        let mut perms = Vec::with_capacity(block_sizes.len());
        for p in 0..block_sizes.len() {
            let mut perm: Vec<u32> = (0..n as u32).collect();
            if p > 0 || cfg.shuffle_before {
                perm.shuffle(&mut rng_for(shuffle_seed, p as u64, 0));
            }
            perms.push(perm);
        }
        let inverse = perms
            .iter()
            .map(|perm| {
                let mut inv = vec![0u32; n];
                for (i, &k) in perm.iter().enumerate() {
                    inv[k as usize] = i as u32;
                }
                inv
            })
            .collect();
        CascadePlan { n, block_sizes, perms, inverse }
    }

    pub fn passes(&self) -> usize {
        self.block_sizes.len()
    }

    fn blocks(&self, pass: usize) -> usize {
        self.n.div_ceil(self.block_sizes[pass])
    }

    fn block_range(&self, pass: usize, block: usize) -> (usize, usize) {
        let k = self.block_sizes[pass];
        (block * k, ((block + 1) * k).min(self.n))
    }

    fn block_of(&self, pass: usize, key_index: usize) -> usize {
        self.inverse[pass][key_index] as usize / self.block_sizes[pass]
    }

    fn parity(&self, bits: &[bool], pass: usize, start: usize, end: usize) -> bool {
        self.perms[pass][start..end].iter().fold(false, |acc, &k| acc ^ bits[k as usize])
    }
}

/// Parity of positions `[start, end)` in the order of pass `pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParityQuery {
    pub pass: u8,
    pub start: u32,
    pub end: u32,
}

/// Source of Alice's parities. One call is one request/reply round trip.
pub trait ParityOracle {
    fn parities(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, ReconcileError>;
}

/// Alice's answers to a batch of queries.
pub fn answer_parity_queries(
    bits: &[bool],
    plan: &CascadePlan,
    queries: &[ParityQuery],
) -> Result<Vec<bool>, ReconcileError> {
    queries
        .iter()
        .map(|q| {
            let (p, s, e) = (q.pass as usize, q.start as usize, q.end as usize);
            if p >= plan.passes() || s > e || e > plan.n {
                return Err(ReconcileError::QueryOutOfRange { pass: q.pass, start: q.start, end: q.end });
            }
            Ok(plan.parity(bits, p, s, e))
        })
        .collect()
}

/// In-process oracle over Alice's key.
pub struct LocalParityOracle<'a> {
    bits: &'a [bool],
    plan: &'a CascadePlan,
    pub sent: u64,
    pub rounds: u64,
}

impl<'a> LocalParityOracle<'a> {
    pub fn new(bits: &'a [bool], plan: &'a CascadePlan) -> Self {
        LocalParityOracle { bits, plan, sent: 0, rounds: 0 }
    }
}

impl ParityOracle for LocalParityOracle<'_> {
    fn parities(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, ReconcileError> {
        let out = answer_parity_queries(self.bits, self.plan, queries)?;
        self.sent += out.len() as u64;
        self.rounds += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub corrected: Vec<bool>,
    pub leaked_bits: u64,
    pub parity_messages: u64,
    /// Key positions flipped, in order of correction.
    pub flipped: Vec<usize>,
}

struct Search {
    pass: usize,
    start: usize,
    end: usize,
}

/// Runs cascade on Bob's key against the oracle, returning his corrected key.
pub fn cascade_bob(
    bob: &[bool],
    plan: &CascadePlan,
    backtrack: Backtrack,
    oracle: &mut dyn ParityOracle,
) -> Result<CascadeOutcome, ReconcileError> {
    let mut bits = bob.to_vec();
    let mut out = CascadeOutcome { corrected: Vec::new(), leaked_bits: 0, parity_messages: 0, flipped: Vec::new() };
    if plan.n == 0 {
        out.corrected = bits;
        return Ok(out);
    }
    let mut ask = |queries: &[ParityQuery], out: &mut CascadeOutcome| -> Result<Vec<bool>, ReconcileError> {
        let answers = oracle.parities(queries)?;
        if answers.len() != queries.len() {
            return Err(ReconcileError::Channel(format!(
                "{} parities for {} queries",
                answers.len(),
                queries.len()
            )));
        }
        out.leaked_bits += answers.len() as u64;
        out.parity_messages += 1;
        Ok(answers)
    };
    // odd[p] holds blocks of pass p whose parity differs from Alice's.
    let mut odd: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); plan.passes()];

    for pass in 0..plan.passes() {
        let queries: Vec<ParityQuery> = (0..plan.blocks(pass))
            .map(|b| {
                let (s, e) = plan.block_range(pass, b);
                ParityQuery { pass: pass as u8, start: s as u32, end: e as u32 }
            })
            .collect();
        let alice = ask(&queries, &mut out)?;
        for (b, &pa) in alice.iter().enumerate() {
            let (s, e) = plan.block_range(pass, b);
            if plan.parity(&bits, pass, s, e) != pa {
                odd[pass].insert(b);
            }
        }

        loop {
            let active = (0..=pass).filter(|&p| backtrack == Backtrack::Full || p == 0 || p == pass);
            let Some(target) = active.into_iter().find(|&p| !odd[p].is_empty()) else {
                break;
            };
            let mut searches: Vec<Search> = odd[target]
                .iter()
                .map(|&b| {
                    let (start, end) = plan.block_range(target, b);
                    Search { pass: target, start, end }
                })
                .collect();
            while searches.iter().any(|s| s.end - s.start > 1) {
                let open: Vec<usize> = (0..searches.len()).filter(|&i| searches[i].end - searches[i].start > 1).collect();
                let queries: Vec<ParityQuery> = open
                    .iter()
                    .map(|&i| {
                        let s = &searches[i];
                        let mid = s.start + (s.end - s.start) / 2;
                        ParityQuery { pass: s.pass as u8, start: s.start as u32, end: mid as u32 }
                    })
                    .collect();
                let alice = ask(&queries, &mut out)?;
                for (&i, &pa) in open.iter().zip(&alice) {
                    let s = &mut searches[i];
                    let mid = s.start + (s.end - s.start) / 2;
                    if plan.parity(&bits, s.pass, s.start, mid) != pa {
                        s.end = mid;
                    } else {
                        s.start = mid;
                    }
                }
            }
            for s in &searches {
                let k = plan.perms[s.pass][s.start] as usize;
                bits[k] = !bits[k];
                out.flipped.push(k);
                for p in 0..=pass {
                    let b = plan.block_of(p, k);
                    if !odd[p].remove(&b) {
                        odd[p].insert(b);
                    }
                }
            }
        }
    }
    out.corrected = bits;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileReport {
    pub corrected_key: KeyBuffer,
    pub leaked_bits: u64,
    /// Corrections divided by key length.
    pub measured_error_rate: f64,
    /// Remaining disagreement with Alice's key, where it is known.
    pub residual_error_rate: Option<f64>,
    pub parity_messages: u64,
    pub corrections: usize,
    pub block_sizes: Vec<usize>,
}

/// Single-process cascade: Bob's key is corrected toward Alice's using a
/// local oracle, and the residual is measured against her key.
pub fn cascade(
    alice: &KeyBuffer,
    bob: &KeyBuffer,
    cfg: &CascadeConfig,
    qber_estimate: f64,
    shuffle_seed: u64,
) -> Result<ReconcileReport, ReconcileError> {
    cfg.validate()?;
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch(alice.len(), bob.len()));
    }
    let plan = CascadePlan::new(alice.len(), cfg, qber_estimate, shuffle_seed);
    let mut oracle = LocalParityOracle::new(&alice.bits, &plan);
    let outcome = cascade_bob(&bob.bits, &plan, cfg.backtrack, &mut oracle)?;
    let n = alice.len();
    let residual = hamming(&alice.bits, &outcome.corrected);
    let corrections = outcome.flipped.len();
    Ok(ReconcileReport {
        corrected_key: KeyBuffer::new(outcome.corrected, KeyStage::Corrected, bob.epoch_id),
        leaked_bits: outcome.leaked_bits,
        measured_error_rate: if n > 0 { corrections as f64 / n as f64 } else { 0.0 },
        residual_error_rate: Some(if n > 0 { residual as f64 / n as f64 } else { 0.0 }),
        parity_messages: outcome.parity_messages,
        corrections,
        block_sizes: plan.block_sizes,
    })
}

/// Leaked parities relative to the Shannon limit `n * h2(qber)`.
pub fn leakage_efficiency(leaked_bits: u64, n: usize, true_qber: f64) -> Result<f64, ReconcileError> {
    if !(true_qber > 0.0) || n == 0 {
        return Err(ReconcileError::ZeroErrorRate);
    }
    Ok(leaked_bits as f64 / (n as f64 * h2(true_qber)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn keys(n: usize, q: f64, seed: u64) -> (KeyBuffer, KeyBuffer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<bool> = a.iter().map(|&x| x ^ (rng.random::<f64>() < q)).collect();
        (KeyBuffer::new(a, KeyStage::Sifted, 0), KeyBuffer::new(b, KeyStage::Sifted, 0))
    }

    #[test]
    fn identical_keys_only_block_parities() {
        let (a, _) = keys(1000, 0.0, 1);
        let cfg = CascadeConfig { initial_block_size: Some(16), ..CascadeConfig::default() };
        let r = cascade(&a, &a, &cfg, 0.05, 9).unwrap();
        assert_eq!(r.corrections, 0);
        let expected: u64 = [16usize, 32, 64, 128, 256].iter().map(|k| 1000usize.div_ceil(*k) as u64).sum();
        assert_eq!(r.leaked_bits, expected);
        assert_eq!(r.parity_messages, 5);
    }

    #[test]
    fn single_error_eight_bits() {
        let a = KeyBuffer::new(vec![false; 8], KeyStage::Sifted, 0);
        let mut bits = vec![false; 8];
        bits[3] = true;
        let b = KeyBuffer::new(bits, KeyStage::Sifted, 0);
        let cfg = CascadeConfig {
            passes: 1,
            initial_block_size: Some(8),
            shuffle_before: false,
            ..CascadeConfig::default()
        };
        let r = cascade(&a, &b, &cfg, 0.1, 0).unwrap();
        assert_eq!(r.corrected_key.bits, a.bits);
        assert_eq!(r.leaked_bits, 1 + 3);
        assert_eq!(r.residual_error_rate, Some(0.0));
    }

    #[test]
    fn auto_block_sizes() {
        assert_eq!(auto_block_size(0.0492), 15);
        assert_eq!(auto_block_size(0.0), MAX_BLOCK_SIZE);
        assert_eq!(auto_block_size(0.5), 4);
        let cfg = CascadeConfig::default();
        assert_eq!(block_sizes(&cfg, 0.0456), vec![16, 32, 64, 128, 256]);
    }

    #[test]
    fn corrects_typical_key() {
        let (a, b) = keys(20_000, 0.05, 3);
        let r = cascade(&a, &b, &CascadeConfig::default(), 0.05, 4).unwrap();
        assert_eq!(r.residual_error_rate, Some(0.0));
        assert_eq!(r.corrections, a.hamming_distance(&b));
        let f = leakage_efficiency(r.leaked_bits, 20_000, 0.05).unwrap();
        assert!(f > 1.0 && f < 1.5, "{f}");
    }

    #[test]
    fn out_of_range_query_rejected() {
        let plan = CascadePlan::new(8, &CascadeConfig::default(), 0.1, 0);
        let q = [ParityQuery { pass: 0, start: 4, end: 9 }];
        assert!(answer_parity_queries(&[false; 8], &plan, &q).is_err());
        let q = [ParityQuery { pass: 9, start: 0, end: 1 }];
        assert!(answer_parity_queries(&[false; 8], &plan, &q).is_err());
    }

    #[test]
    fn parity_is_xor() {
        let cfg = CascadeConfig { shuffle_before: false, ..CascadeConfig::default() };
        let plan = CascadePlan::new(3, &cfg, 0.1, 0);
        let q = [ParityQuery { pass: 0, start: 0, end: 3 }, ParityQuery { pass: 0, start: 1, end: 1 }];
        assert_eq!(answer_parity_queries(&[true, false, true], &plan, &q).unwrap(), vec![false, false]);
    }

    #[test]
    fn efficiency_at_two_link_operating_point() {
        let f = leakage_efficiency(174, 284, 0.0492).unwrap();
        assert!((f - 2.16).abs() < 0.01, "{f}");
        assert_eq!(leakage_efficiency(1, 10, 0.0), Err(ReconcileError::ZeroErrorRate));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn leaked_equals_oracle_count(n in 10usize..600, q in 0.0f64..0.12, seed in any::<u64>(), full in any::<bool>()) {
            let (a, b) = keys(n, q, seed);
            let cfg = CascadeConfig {
                backtrack: if full { Backtrack::Full } else { Backtrack::FirstPassOnly },
                ..CascadeConfig::default()
            };
            let plan = CascadePlan::new(n, &cfg, q.max(0.01), seed);
            let mut oracle = LocalParityOracle::new(&a.bits, &plan);
            let out = cascade_bob(&b.bits, &plan, cfg.backtrack, &mut oracle).unwrap();
            prop_assert_eq!(out.leaked_bits, oracle.sent);
            prop_assert_eq!(out.parity_messages, oracle.rounds);
            // Every flip moves Bob toward or away from Alice by one bit.
            let before = a.hamming_distance(&b) as i64;
            let after = hamming(&a.bits, &out.corrected) as i64;
            prop_assert!(after <= before);
        }

        #[test]
        fn full_backtracking_no_worse(seed in any::<u64>()) {
            let (a, b) = keys(2_000, 0.06, seed);
            let full = cascade(&a, &b, &CascadeConfig::default(), 0.06, seed).unwrap();
            let simple = CascadeConfig { backtrack: Backtrack::FirstPassOnly, ..CascadeConfig::default() };
            let simple = cascade(&a, &b, &simple, 0.06, seed).unwrap();
            prop_assert!(full.residual_error_rate.unwrap() <= simple.residual_error_rate.unwrap());
        }
    }
}
