//! One node's side of a key-generation session. The exchange is strictly
//! half-duplex: at every point exactly one side may send, and the other
//! blocks on the next frame.

use std::io::{Read, Write};

use thiserror::Error;

use super::ledger::CommLedger;
use super::messages::{basis_only, AbortReason, Message, PROTOCOL_VERSION};
use super::records::PairRecord;
use super::transport::Link;
use super::NetError;
use crate::analysis::EpochStats;
use crate::coincidence::{correlate, deskew_time, find_coincidence_indices, CoincidenceError, OffsetConfig};
use crate::config::{Role, SessionConfig};
use crate::model::{Basis, DetectionEvent, KeyBuffer, KeyStage, Tick};
use crate::privacy::{privacy_amplify, secure_length, verify_digests, KeyStore, SecureLengthInputs};
use crate::reconcile::{
    answer_parity_queries, auto_block_size, cascade_bob, sample_indices, Backtrack, CascadeConfig, CascadePlan,
    ErrorRateTracker, ParityOracle, ParityQuery, ReconcileError,
};
use crate::seed::{derive_seed, rng_for, tags};
use crate::sim::MAX_INITIAL_OFFSET;

/// Sifted keys shorter than this are dropped without reconciliation.
pub const MIN_SIFTED_BITS: usize = 64;
/// Extra span of its own stream the matching side searches, ticks.
pub const MATCH_MARGIN: u64 = MAX_INITIAL_OFFSET as u64;
/// Half-width of the offset search once a previous offset is known, in
/// coarse bins.
pub const TRACKING_BINS: u64 = 64;
pub const MAX_VERIFY_ROUNDS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionOutcome {
    /// This node's view of every processed epoch.
    pub epochs: Vec<EpochStats>,
    /// Final keys of verified epochs, in epoch order.
    pub keys: Vec<KeyBuffer>,
    pub pairs: Vec<PairRecord>,
    pub ledger: CommLedger,
}

#[derive(Debug, Error)]
#[error("{role} session failed after epoch {last_completed}: {error}")]
pub struct SessionFailure {
    pub role: Role,
    pub error: NetError,
    /// Last epoch both sides finished; 0 if none.
    pub last_completed: u32,
    pub partial: SessionOutcome,
}

/// Why an epoch stopped early.
enum Step {
    /// Local protocol failure: tell the peer, then end the session.
    Fatal(NetError),
    /// Transport failure or a session-ending abort from the peer.
    PeerFatal(NetError),
    /// Abandon this epoch and tell the peer.
    Abort(AbortReason, String),
    /// The peer abandoned this epoch.
    PeerAborted,
}

impl From<NetError> for Step {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Frame(_) | NetError::Io(_) => Step::PeerFatal(e),
            other => Step::Fatal(other),
        }
    }
}

fn violation(msg: impl Into<String>) -> Step {
    Step::Fatal(NetError::Protocol(msg.into()))
}

fn unexpected(m: &Message, wanted: &str) -> Step {
    violation(format!("expected {wanted}, got {:?}", m.msg_type()))
}

/// Next message of `epoch`, with aborts turned into the matching step.
fn recv_in<S: Read + Write>(link: &mut Link<S>, epoch: u32) -> Result<Message, Step> {
    let (e, m) = link.recv().map_err(Step::from)?;
    if let Message::Abort { reason, detail } = m {
        return Err(match reason {
            AbortReason::LockFailure | AbortReason::VerificationFailed | AbortReason::Requested if e == epoch => {
                Step::PeerAborted
            }
            _ => Step::PeerFatal(NetError::PeerAbort { reason, detail }),
        });
    }
    if e != epoch {
        return Err(violation(format!("frame for epoch {e} during epoch {epoch}")));
    }
    Ok(m)
}

/// Parity source that asks Alice over the link.
struct NetOracle<'l, S> {
    link: &'l mut Link<S>,
    epoch: u32,
    failure: Option<Step>,
}

impl<S: Read + Write> ParityOracle for NetOracle<'_, S> {
    fn parities(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, ReconcileError> {
        let res = (|| {
            self.link.send(self.epoch, &Message::ParityRequest { queries: queries.to_vec() })?;
            match recv_in(self.link, self.epoch)? {
                Message::ParityReply { parities, .. } => Ok(parities),
                m => Err(unexpected(&m, "PARITY_REPLY")),
            }
        })();
        res.map_err(|step| {
            self.failure = Some(step);
            ReconcileError::Channel("parity exchange failed".into())
        })
    }
}

fn without<T: Copy>(items: &[T], sorted_idx: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len() - sorted_idx.len());
    let mut k = 0;
    for (i, &x) in items.iter().enumerate() {
        if k < sorted_idx.len() && sorted_idx[k] == i {
            k += 1;
        } else {
            out.push(x);
        }
    }
    out
}

fn rate(num: u64, den: u64) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else {
        0.0
    }
}

struct Node<'a, S> {
    cfg: &'a SessionConfig,
    role: Role,
    link: Link<S>,
    events: &'a [DetectionEvent],
    /// Own events already paired in an earlier epoch.
    consumed: Vec<bool>,
    tracker: ErrorRateTracker,
    prev_offset: Option<i64>,
    store: Option<&'a KeyStore>,
    out: SessionOutcome,
}

/// Runs the whole session for `role` over `stream`. `events` is this node's
/// sorted detection stream on its own clock. Verified keys are written to
/// `store` as they are produced.
pub fn run_session<S: Read + Write>(
    stream: S,
    cfg: &SessionConfig,
    role: Role,
    events: &[DetectionEvent],
    store: Option<&KeyStore>,
) -> Result<SessionOutcome, Box<SessionFailure>> {
    let mut node = Node {
        cfg,
        role,
        link: Link::new(stream),
        events,
        consumed: vec![false; events.len()],
        tracker: ErrorRateTracker::default(),
        prev_offset: None,
        store,
        out: SessionOutcome::default(),
    };
    let fail = |node: Node<'_, S>, error: NetError, last_completed: u32| {
        let mut partial = node.out;
        partial.ledger = node.link.total_ledger();
        Box::new(SessionFailure { role, error, last_completed, partial })
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(node, NetError::Config(e.to_string()), 0));
    }
    if let Err(step) = node.handshake() {
        let err = node.finish_step(step, 0);
        let err = err.unwrap_or_else(|| NetError::Protocol("peer aborted during the handshake".into()));
        return Err(fail(node, err, 0));
    }
    for epoch in 1..=cfg.epoch_count() {
        let start_s = (epoch - 1) as f64 * cfg.epoch_seconds as f64;
        let mut stats = EpochStats {
            epoch_id: epoch,
            start_s,
            duration_s: (cfg.duration - start_s).min(cfg.epoch_seconds as f64),
            ..Default::default()
        };
        let res = node.run_epoch(epoch, &mut stats);
        if let Err(step) = res {
            stats.secure_bits = 0;
            stats.aborted = true;
            if let Some(err) = node.finish_step(step, epoch) {
                stats.comm = node.link.take_epoch_ledger();
                node.out.epochs.push(stats);
                return Err(fail(node, err, epoch - 1));
            }
        }
        stats.comm = node.link.take_epoch_ledger();
        node.out.epochs.push(stats);
    }
    node.out.ledger = node.link.total_ledger();
    Ok(node.out)
}

impl<S: Read + Write> Node<'_, S> {
    /// Handles a stopped epoch. Returns the error when the session must end.
    fn finish_step(&mut self, step: Step, epoch: u32) -> Option<NetError> {
        match step {
            Step::Abort(reason, detail) => match self.link.send(epoch, &Message::Abort { reason, detail }) {
                Ok(()) => None,
                Err(e) => Some(e),
            },
            Step::PeerAborted => None,
            Step::Fatal(err) => {
                let detail = err.to_string();
                let _ = self.link.send(epoch, &Message::Abort { reason: AbortReason::ProtocolViolation, detail });
                Some(err)
            }
            Step::PeerFatal(err) => Some(err),
        }
    }

    fn handshake(&mut self) -> Result<(), Step> {
        let cfg = self.cfg;
        let hello = Message::Hello {
            version: PROTOCOL_VERSION,
            seed: cfg.seed,
            epochs: cfg.epoch_count(),
            epoch_seconds: cfg.epoch_seconds as u8,
        };
        if self.role == Role::Alice {
            self.link.send(0, &hello)?;
        }
        let reply = recv_in(&mut self.link, 0)?;
        if !matches!(reply, Message::Hello { .. }) {
            return Err(unexpected(&reply, "HELLO"));
        }
        if reply != hello {
            return Err(violation(format!("session parameters differ: local {hello:?}, peer {reply:?}")));
        }
        if self.role == Role::Bob {
            self.link.send(0, &hello)?;
        }
        Ok(())
    }

    fn lock(&self, alice: &[DetectionEvent], bob: &[DetectionEvent]) -> Result<(i64, f64), CoincidenceError> {
        let base = OffsetConfig {
            search_range: self.cfg.search_range,
            center: 0,
            lock_threshold: self.cfg.lock_threshold,
            window: self.cfg.window,
            resync_period: self.cfg.clock.resync_period,
            ..OffsetConfig::default()
        };
        if let Some(prev) = self.prev_offset {
            let tracking = OffsetConfig { search_range: TRACKING_BINS * base.coarse_bin, center: prev, ..base };
            if let Ok((est, _)) = correlate(alice, bob, &tracking) {
                return Ok((est.offset, est.drift));
            }
        }
        let (est, _) = correlate(alice, bob, &base)?;
        Ok((est.offset, est.drift))
    }

    /// Locks onto the peer's batch and pairs it with this node's events.
    /// Returns `(own global index, peer batch index)` in Alice-time order.
    fn match_batch(
        &mut self,
        epoch: u32,
        batch: &[DetectionEvent],
        start: u64,
        end: u64,
    ) -> Result<(i64, f64, Vec<(usize, usize)>), Step> {
        let lo = self.events.partition_point(|e| e.time.0 < start.saturating_sub(MATCH_MARGIN));
        let hi = self.events.partition_point(|e| e.time.0 < end.saturating_add(MATCH_MARGIN));
        let own_idx: Vec<usize> = (lo..hi).filter(|&i| !self.consumed[i]).collect();
        let own: Vec<DetectionEvent> = own_idx.iter().map(|&i| self.events[i]).collect();
        let (alice, bob) = match self.role {
            Role::Alice => (&own[..], batch),
            Role::Bob => (batch, &own[..]),
        };
        let (offset, drift) = match self.lock(alice, bob) {
            Ok(v) => v,
            Err(e) => return Err(Step::Abort(AbortReason::LockFailure, format!("epoch {epoch}: {e}"))),
        };
        let period = self.cfg.clock.resync_period;
        let mut bob_sorted: Vec<(DetectionEvent, usize)> = bob
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let t = deskew_time(e.time.0, offset as f64, drift, period);
                (DetectionEvent { time: Tick(t), channel: e.channel }, i)
            })
            .collect();
        bob_sorted.sort_unstable_by_key(|&(e, i)| (e.time, i));
        let bob_fixed: Vec<DetectionEvent> = bob_sorted.iter().map(|p| p.0).collect();
        let pairs = find_coincidence_indices(alice, &bob_fixed, offset, self.cfg.window)
            .into_iter()
            .map(|(i, j)| {
                let j = bob_sorted[j].1;
                match self.role {
                    Role::Alice => (own_idx[i], j),
                    Role::Bob => (own_idx[j], i),
                }
            })
            .collect();
        Ok((offset, drift, pairs))
    }

    fn run_epoch(&mut self, epoch: u32, stats: &mut EpochStats) -> Result<(), Step> {
        let cfg = self.cfg;
        let start = (epoch as u64 - 1) * cfg.epoch_ticks();
        let end = start + cfg.epoch_ticks();
        let lo = self.events.partition_point(|e| e.time.0 < start);
        let hi = self.events.partition_point(|e| e.time.0 < end);
        let own_core: Vec<usize> = (lo..hi).filter(|&i| !self.consumed[i]).collect();
        let n_own = own_core.len() as u32;

        // Clock sync: Alice first, then Bob.
        let sync = Message::ClockSync { epoch_start: start, event_count: n_own };
        let n_peer = {
            if self.role == Role::Alice {
                self.link.send(epoch, &sync)?;
            }
            let n_peer = match recv_in(&mut self.link, epoch)? {
                Message::ClockSync { epoch_start, event_count } if epoch_start == start => event_count,
                Message::ClockSync { epoch_start, .. } => {
                    return Err(violation(format!("epoch {epoch} starts at {start}, peer says {epoch_start}")))
                }
                m => return Err(unexpected(&m, "CLOCK_SYNC")),
            };
            if self.role == Role::Bob {
                self.link.send(epoch, &sync)?;
            }
            n_peer
        };
        let (n_alice, n_bob) = match self.role {
            Role::Alice => (n_own, n_peer),
            Role::Bob => (n_peer, n_own),
        };
        let sender = if n_alice <= n_bob { Role::Alice } else { Role::Bob };

        // Coincidences: (own global index, peer basis), in Alice-time order.
        let pairs: Vec<(usize, Basis)> = if sender == self.role {
            let batch: Vec<DetectionEvent> = own_core
                .iter()
                .map(|&i| DetectionEvent { time: self.events[i].time, channel: basis_only(self.events[i].channel) })
                .collect();
            self.link.send_timetags(epoch, &batch)?;
            let (offset, indices) = match recv_in(&mut self.link, epoch)? {
                Message::CoincIndices { offset, indices, .. } => (offset, indices),
                m => return Err(unexpected(&m, "COINC_INDICES")),
            };
            let mut seen = vec![false; batch.len()];
            for &k in &indices {
                let k = k as usize;
                if k >= batch.len() || std::mem::replace(&mut seen[k], true) {
                    return Err(violation(format!("coincidence index {k} invalid for a batch of {}", batch.len())));
                }
            }
            let bases = match recv_in(&mut self.link, epoch)? {
                Message::BasisReveal { bases } if bases.len() == indices.len() => bases,
                Message::BasisReveal { bases } => {
                    return Err(violation(format!("{} bases for {} coincidences", bases.len(), indices.len())))
                }
                m => return Err(unexpected(&m, "BASIS_REVEAL")),
            };
            self.prev_offset = Some(offset);
            stats.offset = offset;
            indices.iter().zip(bases).map(|(&k, b)| (own_core[k as usize], b)).collect()
        } else {
            let batch = self.link.recv_timetags(epoch, n_peer as usize, |e, m| match m {
                Message::Abort { reason, detail } => NetError::PeerAbort { reason, detail },
                m => NetError::Protocol(format!("expected TIMETAG_BATCH for epoch {epoch}, got {:?} ({e})", m.msg_type())),
            });
            let batch = batch.map_err(|e| match e {
                NetError::PeerAbort { .. } => Step::PeerFatal(e),
                e => Step::from(e),
            })?;
            let (offset, drift, matched) = self.match_batch(epoch, &batch, start, end)?;
            let indices = matched.iter().map(|&(_, j)| j as u32).collect();
            self.link.send(epoch, &Message::CoincIndices { offset, drift, indices })?;
            let bases = matched.iter().map(|&(g, _)| self.events[g].channel.basis()).collect();
            self.link.send(epoch, &Message::BasisReveal { bases })?;
            self.prev_offset = Some(offset);
            stats.offset = offset;
            matched.iter().map(|&(g, j)| (g, batch[j].channel.basis())).collect()
        };

        for (k, &(g, peer_basis)) in pairs.iter().enumerate() {
            self.consumed[g] = true;
            let e = self.events[g];
            self.out.pairs.push(PairRecord { epoch, index: k as u32, time: e.time.0, channel: e.channel, peer_basis });
        }
        stats.raw_bits = pairs.len() as u64;

        // Sifting. Bob complements his bits.
        let mut bits = Vec::new();
        let mut bases = Vec::new();
        for &(g, peer_basis) in &pairs {
            let c = self.events[g].channel;
            if c.basis() == peer_basis {
                bits.push(c.bit() ^ (self.role == Role::Bob));
                bases.push(peer_basis);
            }
        }
        let n = bits.len();
        stats.sifted_bits = n as u64;
        if n < MIN_SIFTED_BITS {
            return Ok(());
        }
        let n_z = bases.iter().filter(|&&b| b == Basis::Z).count() as u64;
        let n_x = n as u64 - n_z;

        // Error estimation.
        let mode = cfg.cascade.estimate_mode;
        let (estimate, sample, sample_errors) = match self.tracker.stored(mode) {
            Some(q) => (q, Vec::new(), (0u32, 0u32)),
            None => {
                let idx = sample_indices(n, &mut rng_for(cfg.seed, tags::ERE_SAMPLE, epoch as u64));
                let mine: Vec<bool> = idx.iter().map(|&i| bits[i]).collect();
                let mut errors = (0u32, 0u32);
                let total = if self.role == Role::Alice {
                    self.link.send(epoch, &Message::EreSample { bits: mine })?;
                    match recv_in(&mut self.link, epoch)? {
                        Message::EreResult { errors } if errors as usize <= idx.len() => errors,
                        Message::EreResult { errors } => {
                            return Err(violation(format!("{errors} errors in {} sampled bits", idx.len())))
                        }
                        m => return Err(unexpected(&m, "ERE_SAMPLE result")),
                    }
                } else {
                    let theirs = match recv_in(&mut self.link, epoch)? {
                        Message::EreSample { bits } if bits.len() == idx.len() => bits,
                        Message::EreSample { bits } => {
                            return Err(violation(format!("{} sample bits, expected {}", bits.len(), idx.len())))
                        }
                        m => return Err(unexpected(&m, "ERE_SAMPLE")),
                    };
                    for (j, &i) in idx.iter().enumerate() {
                        if theirs[j] != mine[j] {
                            match bases[i] {
                                Basis::Z => errors.0 += 1,
                                Basis::X => errors.1 += 1,
                            }
                        }
                    }
                    let total = errors.0 + errors.1;
                    self.link.send(epoch, &Message::EreResult { errors: total })?;
                    total
                };
                (rate(total as u64, idx.len() as u64), idx, errors)
            }
        };
        let key = without(&bits, &sample);
        let key_bases = without(&bases, &sample);
        let m = key.len();

        // Cascade parameters come from Bob.
        let shuffle_seed = derive_seed(cfg.seed, tags::SHUFFLE, epoch as u64);
        let plan_cfg = if self.role == Role::Bob {
            let k1 = cfg.cascade.initial_block_size.unwrap_or_else(|| auto_block_size(estimate));
            let msg = Message::ShuffleSeed {
                seed: shuffle_seed,
                passes: cfg.cascade.passes as u8,
                initial_block: k1 as u32,
                first_pass_only: cfg.cascade.backtrack == Backtrack::FirstPassOnly,
                shuffle_before: cfg.cascade.shuffle_before,
            };
            self.link.send(epoch, &msg)?;
            CascadeConfig { initial_block_size: Some(k1), ..cfg.cascade.clone() }
        } else {
            match recv_in(&mut self.link, epoch)? {
                Message::ShuffleSeed { seed, passes, initial_block, first_pass_only, shuffle_before } => {
                    let c = CascadeConfig {
                        passes: passes as u32,
                        initial_block_size: Some(initial_block as usize),
                        backtrack: if first_pass_only { Backtrack::FirstPassOnly } else { Backtrack::Full },
                        estimate_mode: mode,
                        shuffle_before,
                    };
                    if seed != shuffle_seed {
                        return Err(violation("shuffle seed does not match the session seed"));
                    }
                    c.validate().map_err(|e| violation(e.to_string()))?;
                    c
                }
                m => return Err(unexpected(&m, "SHUFFLE_SEED")),
            }
        };
        let plan = CascadePlan::new(m, &plan_cfg, estimate, shuffle_seed);

        // Reconciliation, then the error counts Bob reports.
        let (corrected, leaked, errors_z, errors_x, corrections) = if self.role == Role::Bob {
            let mut oracle = NetOracle { link: &mut self.link, epoch, failure: None };
            let outcome = match cascade_bob(&key, &plan, plan_cfg.backtrack, &mut oracle) {
                Ok(o) => o,
                Err(e) => return Err(oracle.failure.take().unwrap_or(Step::Fatal(e.into()))),
            };
            let (mut ez, mut ex) = sample_errors;
            for &k in &outcome.flipped {
                match key_bases[k] {
                    Basis::Z => ez += 1,
                    Basis::X => ex += 1,
                }
            }
            let mut corrected = outcome.corrected;
            if cfg.faults.residual_error_epochs.contains(&epoch) && !corrected.is_empty() {
                corrected[0] = !corrected[0];
            }
            let corrections = outcome.flipped.len() as u32;
            self.link.send(epoch, &Message::PaStats { corrections, errors_z: ez, errors_x: ex })?;
            (corrected, outcome.leaked_bits, ez, ex, corrections)
        } else {
            let mut leaked = 0u64;
            loop {
                match recv_in(&mut self.link, epoch)? {
                    Message::ParityRequest { queries } => {
                        let parities =
                            answer_parity_queries(&key, &plan, &queries).map_err(|e| Step::Fatal(e.into()))?;
                        leaked += parities.len() as u64;
                        let reply = Message::ParityReply { parities, byte_per_parity: cfg.parity_byte_compat };
                        self.link.send(epoch, &reply)?;
                    }
                    Message::PaStats { corrections, errors_z, errors_x } => {
                        if corrections as usize > m || (errors_z + errors_x) as u64 > n as u64 {
                            return Err(violation("error counts exceed the key length"));
                        }
                        break (key.clone(), leaked, errors_z, errors_x, corrections);
                    }
                    m => return Err(unexpected(&m, "PARITY_REQUEST or PA_PARAMS")),
                }
            }
        };
        if m > 0 {
            self.tracker.push(corrections as f64 / m as f64);
        }
        let errors = errors_z as u64 + errors_x as u64;
        stats.corrected_bits = m as u64;
        stats.leaked_bits = leaked;
        stats.qber_total = rate(errors, n as u64);
        stats.qber_z = rate(errors_z as u64, n_z);
        stats.qber_x = rate(errors_x as u64, n_x);
        stats.visibility_z = (1.0 - 2.0 * stats.qber_z).max(0.0);
        stats.visibility_x = (1.0 - 2.0 * stats.qber_x).max(0.0);

        // Amplification parameters, verification and commit.
        let pa_seed = derive_seed(cfg.seed, tags::PRIVACY, epoch as u64);
        let verify_seed = derive_seed(cfg.seed, tags::VERIFY, epoch as u64);
        let block_bits = cfg.pa_block_bits;
        let secure_len = if self.role == Role::Alice {
            let p0 = cfg.bias_correction.then(|| rate(corrected.iter().filter(|&&b| !b).count() as u64, m as u64));
            let secure_len = secure_length(&SecureLengthInputs {
                n_raw: m as u64,
                qber: stats.qber_total,
                n_leakage: leaked,
                n_safety: cfg.safety_bits,
                p0,
            });
            let decision = Message::PaDecision { secure_len, pa_seed, verify_seed, verify_rounds: cfg.verify_rounds };
            self.link.send(epoch, &decision)?;
            let digests = match recv_in(&mut self.link, epoch)? {
                Message::HashVerify { digests } => digests,
                m => return Err(unexpected(&m, "HASH_VERIFY")),
            };
            if digests != verify_digests(&corrected, cfg.verify_rounds, verify_seed, block_bits) {
                return Err(Step::Abort(AbortReason::VerificationFailed, format!("epoch {epoch}: key digests differ")));
            }
            if cfg.faults.abort_epochs.contains(&epoch) {
                return Err(Step::Abort(AbortReason::Requested, format!("epoch {epoch}: abort requested")));
            }
            self.link.send(epoch, &Message::EpochResult { secure_len })?;
            secure_len
        } else {
            let (secure_len, rounds) = match recv_in(&mut self.link, epoch)? {
                Message::PaDecision { secure_len, pa_seed: ps, verify_seed: vs, verify_rounds } => {
                    if ps != pa_seed || vs != verify_seed {
                        return Err(violation("amplification seeds do not match the session seed"));
                    }
                    if secure_len > m as u64 || verify_rounds == 0 || verify_rounds > MAX_VERIFY_ROUNDS {
                        return Err(violation(format!(
                            "secure length {secure_len} or {verify_rounds} verify rounds out of range"
                        )));
                    }
                    (secure_len, verify_rounds)
                }
                m => return Err(unexpected(&m, "PA_PARAMS")),
            };
            let digests = verify_digests(&corrected, rounds, verify_seed, block_bits);
            self.link.send(epoch, &Message::HashVerify { digests })?;
            match recv_in(&mut self.link, epoch)? {
                Message::EpochResult { secure_len: s } if s == secure_len => {}
                m => return Err(unexpected(&m, "EPOCH_RESULT")),
            }
            secure_len
        };
        let corrected = KeyBuffer::new(corrected, KeyStage::Corrected, epoch);
        let key = privacy_amplify(&corrected, secure_len as usize, pa_seed, block_bits)
            .map_err(|e| Step::Fatal(e.into()))?;
        if let Some(store) = self.store {
            store.store(&key).map_err(|e| Step::Fatal(e.into()))?;
        }
        stats.secure_bits = key.len() as u64;
        self.out.keys.push(key);
        Ok(())
    }
}
