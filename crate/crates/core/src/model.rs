//! Shared domain types: timetags, detector channels, key buffers and the
//! coincidence matrix, plus the binary entropy function.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one timetag unit in picoseconds.
pub const TICK_PS: f64 = 156.25;
/// Ticks per nanosecond (exact: 1000 / 156.25).
pub const TICKS_PER_NS: f64 = 6.4;
/// Ticks per second.
pub const TICKS_PER_SECOND: u64 = 6_400_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityDomain(f64),
    #[error("invalid channel code {0}")]
    InvalidChannel(u8),
    #[error("key stage cannot go from {from:?} to {to:?}")]
    StageOrder { from: KeyStage, to: KeyStage },
    #[error("key length grew from {from} to {to} across a stage transition")]
    LengthGrew { from: usize, to: usize },
}

/// A time stamp in units of 156.25 ps, relative to the start of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Tick(pub u64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    /// Converts nanoseconds to ticks, rounding half-up.
    pub fn from_ns(ns: f64) -> Tick {
        Tick(ns_to_ticks(ns).max(0) as u64)
    }

    pub fn from_secs(s: f64) -> Tick {
        Tick::from_ns(s * 1e9)
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / TICKS_PER_NS
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl Add<u64> for Tick {
    type Output = Tick;
    fn add(self, rhs: u64) -> Tick {
        Tick(self.0 + rhs)
    }
}

impl Sub for Tick {
    type Output = i64;
    fn sub(self, rhs: Tick) -> i64 {
        self.0 as i64 - rhs.0 as i64
    }
}

/// Signed nanoseconds to signed ticks, rounding half-up.
pub fn ns_to_ticks(ns: f64) -> i64 {
    (ns * TICKS_PER_NS + 0.5).floor() as i64
}

pub fn secs_to_ticks(s: f64) -> i64 {
    ns_to_ticks(s * 1e9)
}

pub fn ticks_to_secs(t: i64) -> f64 {
    t as f64 / TICKS_PER_SECOND as f64
}

/// Measurement basis of the passive analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Rectilinear, H/V.
    Z,
    /// Diagonal, +45/-45.
    X,
}

/// One of the four detector outputs of a polarization analysis box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    H,
    V,
    Plus,
    Minus,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::H, Channel::V, Channel::Plus, Channel::Minus];

    /// Wire and file code: 0=H, 1=V, 2=Plus, 3=Minus.
    pub fn code(self) -> u8 {
        match self {
            Channel::H => 0,
            Channel::V => 1,
            Channel::Plus => 2,
            Channel::Minus => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Channel, ModelError> {
        match code {
            0 => Ok(Channel::H),
            1 => Ok(Channel::V),
            2 => Ok(Channel::Plus),
            3 => Ok(Channel::Minus),
            other => Err(ModelError::InvalidChannel(other)),
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }

    pub fn basis(self) -> Basis {
        channel_to_basis_bit(self).0
    }

    pub fn bit(self) -> bool {
        channel_to_basis_bit(self).1
    }

    pub fn from_basis_bit(basis: Basis, bit: bool) -> Channel {
        match (basis, bit) {
            (Basis::Z, false) => Channel::H,
            (Basis::Z, true) => Channel::V,
            (Basis::X, false) => Channel::Plus,
            (Basis::X, true) => Channel::Minus,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::H => "H",
            Channel::V => "V",
            Channel::Plus => "+",
            Channel::Minus => "-",
        };
        f.write_str(s)
    }
}

/// H and + carry bit 0, V and - carry bit 1.
pub fn channel_to_basis_bit(c: Channel) -> (Basis, bool) {
    match c {
        Channel::H => (Basis::Z, false),
        Channel::V => (Basis::Z, true),
        Channel::Plus => (Basis::X, false),
        Channel::Minus => (Basis::X, true),
    }
}

/// A single time-stamped detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub time: Tick,
    pub channel: Channel,
}

impl DetectionEvent {
    pub fn new(time: u64, channel: Channel) -> Self {
        DetectionEvent { time: Tick(time), channel }
    }
}

/// An Alice detection matched with a Bob detection. `bob_time` is on Bob's
/// clock after drift correction, so `bob_time - offset` lands within the
/// coincidence window of `alice_time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoincidentPair {
    pub alice_time: Tick,
    pub bob_time: Tick,
    pub alice_channel: Channel,
    pub bob_channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyStage {
    Raw,
    Sifted,
    Corrected,
    Secure,
}

/// An ordered bit string tagged with the pipeline stage it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBuffer {
    pub bits: Vec<bool>,
    pub stage: KeyStage,
    pub epoch_id: u32,
}

impl KeyBuffer {
    pub fn new(bits: Vec<bool>, stage: KeyStage, epoch_id: u32) -> Self {
        KeyBuffer { bits, stage, epoch_id }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Moves the buffer to a later stage, replacing its content. The new
    /// content may not be longer than the old.
    pub fn advance(self, stage: KeyStage, bits: Vec<bool>) -> Result<KeyBuffer, ModelError> {
        if stage < self.stage {
            return Err(ModelError::StageOrder { from: self.stage, to: stage });
        }
        if bits.len() > self.bits.len() {
            return Err(ModelError::LengthGrew { from: self.bits.len(), to: bits.len() });
        }
        Ok(KeyBuffer { bits, stage, epoch_id: self.epoch_id })
    }

    pub fn hamming_distance(&self, other: &KeyBuffer) -> usize {
        hamming(&self.bits, &other.bits)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

/// Packs bits MSB-first into bytes; the final byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect()
}

/// Joint Alice/Bob channel outcome counts, indexed `[bob][alice]` like the
/// two-link reference matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoincidenceMatrix {
    pub counts: [[u64; 4]; 4],
}

impl CoincidenceMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        CoincidenceMatrix { counts }
    }

    pub fn get(&self, bob: Channel, alice: Channel) -> u64 {
        self.counts[bob.index()][alice.index()]
    }

    pub fn record(&mut self, alice: Channel, bob: Channel) {
        self.counts[bob.index()][alice.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Alice's per-channel totals (column sums).
    pub fn alice_totals(&self) -> [u64; 4] {
        let mut t = [0; 4];
        for row in &self.counts {
            for (a, v) in row.iter().enumerate() {
                t[a] += v;
            }
        }
        t
    }

    /// Bob's per-channel totals (row sums).
    pub fn bob_totals(&self) -> [u64; 4] {
        let mut t = [0; 4];
        for (b, row) in self.counts.iter().enumerate() {
            t[b] = row.iter().sum();
        }
        t
    }

    pub fn merge(&mut self, other: &CoincidenceMatrix) {
        for b in 0..4 {
            for a in 0..4 {
                self.counts[b][a] += other.counts[b][a];
            }
        }
    }

    pub fn scaled(&self, factor: u64) -> CoincidenceMatrix {
        let mut m = *self;
        m.counts.iter_mut().flatten().for_each(|v| *v *= factor);
        m
    }
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(ModelError::ProbabilityDomain(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// `binary_entropy` for callers that already guarantee the domain.
pub(crate) fn h2(x: f64) -> f64 {
    binary_entropy(x.clamp(0.0, 1.0)).unwrap_or(0.0)
}
