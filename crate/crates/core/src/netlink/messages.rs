//! Typed protocol messages and their payload encodings. Counts and scalars
//! are big-endian; timetags are little-endian like the timetag file format.

use thiserror::Error;

use super::frame::{Frame, MessageType};
use crate::model::{pack_bits, unpack_bits, Basis, Channel, DetectionEvent, Tick};
use crate::reconcile::ParityQuery;

#[derive(Debug, Error, PartialEq)]
pub enum MessageError {
    #[error("malformed {0:?} payload: {1}")]
    Malformed(MessageType, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AbortReason {
    LockFailure = 1,
    VerificationFailed = 2,
    ProtocolViolation = 3,
    Requested = 4,
    Other = 255,
}

impl AbortReason {
    fn from_code(c: u8) -> AbortReason {
        match c {
            1 => AbortReason::LockFailure,
            2 => AbortReason::VerificationFailed,
            3 => AbortReason::ProtocolViolation,
            4 => AbortReason::Requested,
            _ => AbortReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u8, seed: u64, epochs: u32, epoch_seconds: u8 },
    ClockSync { epoch_start: u64, event_count: u32 },
    /// Channels carry only the basis (H for Z, + for X).
    TimetagBatch { events: Vec<DetectionEvent> },
    /// Coincidences as indices into the peer's timetag batch, in Alice-time
    /// order.
    CoincIndices { offset: i64, drift: f64, indices: Vec<u32> },
    BasisReveal { bases: Vec<Basis> },
    EreSample { bits: Vec<bool> },
    EreResult { errors: u32 },
    ParityRequest { queries: Vec<ParityQuery> },
    ParityReply { parities: Vec<bool>, byte_per_parity: bool },
    ShuffleSeed { seed: u64, passes: u8, initial_block: u32, first_pass_only: bool, shuffle_before: bool },
    /// Bob's correction counts after cascade.
    PaStats { corrections: u32, errors_z: u32, errors_x: u32 },
    /// Alice's amplification decision.
    PaDecision { secure_len: u64, pa_seed: u64, verify_seed: u64, verify_rounds: u32 },
    HashVerify { digests: Vec<u32> },
    EpochResult { secure_len: u64 },
    Abort { reason: AbortReason, detail: String },
}

pub const PROTOCOL_VERSION: u8 = 1;
pub const TIMETAG_BYTES: usize = 9;
pub const PARITY_QUERY_BYTES: usize = 9;

/// Channel sent for an event: the bit is masked so only the basis leaks.
pub fn basis_only(c: Channel) -> Channel {
    Channel::from_basis_bit(c.basis(), false)
}

fn put_bits(out: &mut Vec<u8>, bits: &[bool]) {
    out.extend_from_slice(&(bits.len() as u32).to_be_bytes());
    out.extend_from_slice(&pack_bits(bits));
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        use Message::*;
        match self {
            Hello { .. } => MessageType::Hello,
            ClockSync { .. } => MessageType::ClockSync,
            TimetagBatch { .. } => MessageType::TimetagBatch,
            CoincIndices { .. } => MessageType::CoincIndices,
            BasisReveal { .. } => MessageType::BasisReveal,
            EreSample { .. } | EreResult { .. } => MessageType::EreSample,
            ParityRequest { .. } => MessageType::ParityRequest,
            ParityReply { .. } => MessageType::ParityReply,
            ShuffleSeed { .. } => MessageType::ShuffleSeed,
            PaStats { .. } | PaDecision { .. } => MessageType::PaParams,
            HashVerify { .. } => MessageType::HashVerify,
            EpochResult { .. } => MessageType::EpochResult,
            Abort { .. } => MessageType::Abort,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        use Message::*;
        let mut out = Vec::new();
        match self {
            Hello { version, seed, epochs, epoch_seconds } => {
                out.push(*version);
                out.extend_from_slice(&seed.to_be_bytes());
                out.extend_from_slice(&epochs.to_be_bytes());
                out.push(*epoch_seconds);
            }
            ClockSync { epoch_start, event_count } => {
                out.extend_from_slice(&epoch_start.to_be_bytes());
                out.extend_from_slice(&event_count.to_be_bytes());
            }
            TimetagBatch { events } => {
                out.reserve(4 + TIMETAG_BYTES * events.len());
                out.extend_from_slice(&(events.len() as u32).to_be_bytes());
                for e in events {
                    out.extend_from_slice(&e.time.0.to_le_bytes());
                    out.push(e.channel.code());
                }
            }
            CoincIndices { offset, drift, indices } => {
                out.extend_from_slice(&offset.to_be_bytes());
                out.extend_from_slice(&drift.to_be_bytes());
                out.extend_from_slice(&(indices.len() as u32).to_be_bytes());
                for i in indices {
                    out.extend_from_slice(&i.to_be_bytes());
                }
            }
            BasisReveal { bases } => {
                let bits: Vec<bool> = bases.iter().map(|&b| b == Basis::X).collect();
                put_bits(&mut out, &bits);
            }
            EreSample { bits } => {
                out.push(0);
                put_bits(&mut out, bits);
            }
            EreResult { errors } => {
                out.push(1);
                out.extend_from_slice(&errors.to_be_bytes());
            }
            ParityRequest { queries } => {
                out.extend_from_slice(&(queries.len() as u32).to_be_bytes());
                for q in queries {
                    out.push(q.pass);
                    out.extend_from_slice(&q.start.to_be_bytes());
                    out.extend_from_slice(&q.end.to_be_bytes());
                }
            }
            ParityReply { parities, byte_per_parity } => {
                out.push(*byte_per_parity as u8);
                if *byte_per_parity {
                    out.extend_from_slice(&(parities.len() as u32).to_be_bytes());
                    out.extend(parities.iter().map(|&p| p as u8));
                } else {
                    put_bits(&mut out, parities);
                }
            }
            ShuffleSeed { seed, passes, initial_block, first_pass_only, shuffle_before } => {
                out.extend_from_slice(&seed.to_be_bytes());
                out.push(*passes);
                out.extend_from_slice(&initial_block.to_be_bytes());
                out.push(*first_pass_only as u8);
                out.push(*shuffle_before as u8);
            }
            PaStats { corrections, errors_z, errors_x } => {
                out.push(0);
                for v in [corrections, errors_z, errors_x] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
            PaDecision { secure_len, pa_seed, verify_seed, verify_rounds } => {
                out.push(1);
                for v in [secure_len, pa_seed, verify_seed] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out.extend_from_slice(&verify_rounds.to_be_bytes());
            }
            HashVerify { digests } => {
                out.extend_from_slice(&(digests.len() as u32).to_be_bytes());
                for d in digests {
                    out.extend_from_slice(&d.to_be_bytes());
                }
            }
            EpochResult { secure_len } => out.extend_from_slice(&secure_len.to_be_bytes()),
            Abort { reason, detail } => {
                out.push(*reason as u8);
                out.extend_from_slice(detail.as_bytes());
            }
        }
        out
    }

    pub fn to_frame(&self, epoch: u32) -> Frame {
        Frame::new(self.msg_type(), epoch, self.encode_payload())
    }

    pub fn decode(msg_type: MessageType, payload: &[u8]) -> Result<Message, MessageError> {
        let mut r = Reader { buf: payload, pos: 0, ty: msg_type };
        use Message::*;
        let msg = match msg_type {
            MessageType::Hello => Hello { version: r.u8()?, seed: r.u64()?, epochs: r.u32()?, epoch_seconds: r.u8()? },
            MessageType::ClockSync => ClockSync { epoch_start: r.u64()?, event_count: r.u32()? },
            MessageType::TimetagBatch => {
                let n = r.count(TIMETAG_BYTES)?;
                let mut events = Vec::with_capacity(n);
                for _ in 0..n {
                    let t = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                    let c = r.u8()?;
                    let channel = Channel::from_code(c).map_err(|e| r.err(e.to_string()))?;
                    events.push(DetectionEvent { time: Tick(t), channel });
                }
                TimetagBatch { events }
            }
            MessageType::CoincIndices => {
                let offset = r.u64()? as i64;
                let drift = f64::from_bits(r.u64()?);
                let n = r.count(4)?;
                let indices = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                CoincIndices { offset, drift, indices }
            }
            MessageType::BasisReveal => {
                BasisReveal { bases: r.bits()?.into_iter().map(|x| if x { Basis::X } else { Basis::Z }).collect() }
            }
            MessageType::EreSample => match r.u8()? {
                0 => EreSample { bits: r.bits()? },
                1 => EreResult { errors: r.u32()? },
                k => return Err(r.err(format!("unknown kind {k}"))),
            },
            MessageType::ParityRequest => {
                let n = r.count(PARITY_QUERY_BYTES)?;
                let mut queries = Vec::with_capacity(n);
                for _ in 0..n {
                    queries.push(ParityQuery { pass: r.u8()?, start: r.u32()?, end: r.u32()? });
                }
                ParityRequest { queries }
            }
            MessageType::ParityReply => match r.u8()? {
                0 => ParityReply { parities: r.bits()?, byte_per_parity: false },
                1 => {
                    let n = r.count(1)?;
                    let parities = r.take(n)?.iter().map(|&b| b != 0).collect();
                    ParityReply { parities, byte_per_parity: true }
                }
                k => return Err(r.err(format!("unknown parity encoding {k}"))),
            },
            MessageType::ShuffleSeed => ShuffleSeed {
                seed: r.u64()?,
                passes: r.u8()?,
                initial_block: r.u32()?,
                first_pass_only: r.u8()? != 0,
                shuffle_before: r.u8()? != 0,
            },
            MessageType::PaParams => match r.u8()? {
                0 => PaStats { corrections: r.u32()?, errors_z: r.u32()?, errors_x: r.u32()? },
                1 => PaDecision { secure_len: r.u64()?, pa_seed: r.u64()?, verify_seed: r.u64()?, verify_rounds: r.u32()? },
                k => return Err(r.err(format!("unknown kind {k}"))),
            },
            MessageType::HashVerify => {
                let n = r.count(4)?;
                HashVerify { digests: (0..n).map(|_| r.u32()).collect::<Result<_, _>>()? }
            }
            MessageType::EpochResult => EpochResult { secure_len: r.u64()? },
            MessageType::Abort => {
                let reason = AbortReason::from_code(r.u8()?);
                let detail = String::from_utf8_lossy(r.rest()).into_owned();
                Abort { reason, detail }
            }
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, MessageError> {
        Message::decode(frame.msg_type, &frame.payload)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    ty: MessageType,
}

impl<'a> Reader<'a> {
    fn err(&self, m: String) -> MessageError {
        MessageError::Malformed(self.ty, m)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads a count and checks the remaining payload can hold it.
    fn count(&mut self, item_bytes: usize) -> Result<usize, MessageError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item_bytes) > self.buf.len() - self.pos {
            return Err(self.err(format!("count {n} exceeds payload")));
        }
        Ok(n)
    }

    fn bits(&mut self) -> Result<Vec<bool>, MessageError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n.div_ceil(8))?;
        Ok(unpack_bits(bytes, n))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), MessageError> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Message> {
        use Message::*;
        vec![
            Hello { version: 1, seed: 77, epochs: 30, epoch_seconds: 2 },
            ClockSync { epoch_start: 6_400_000_000, event_count: 25_893 },
            TimetagBatch { events: vec![DetectionEvent::new(5, Channel::H), DetectionEvent::new(9, Channel::Plus)] },
            CoincIndices { offset: -12_345_678, drift: 1e-8, indices: vec![0, 5, 9] },
            BasisReveal { bases: vec![Basis::Z, Basis::X, Basis::X] },
            EreSample { bits: vec![true, false, true] },
            EreResult { errors: 3 },
            ParityRequest { queries: vec![ParityQuery { pass: 2, start: 10, end: 20 }] },
            ParityReply { parities: vec![true; 9], byte_per_parity: false },
            ParityReply { parities: vec![true, false], byte_per_parity: true },
            ShuffleSeed { seed: 5, passes: 5, initial_block: 16, first_pass_only: true, shuffle_before: true },
            PaStats { corrections: 14, errors_z: 8, errors_x: 6 },
            PaDecision { secure_len: 120, pa_seed: 1, verify_seed: 2, verify_rounds: 64 },
            HashVerify { digests: vec![1, 2, 3] },
            EpochResult { secure_len: 120 },
            Abort { reason: AbortReason::VerificationFailed, detail: "hash mismatch".into() },
        ]
    }

    #[test]
    fn all_messages_round_trip() {
        for m in samples() {
            let f = m.to_frame(4);
            assert_eq!(Message::from_frame(&f).unwrap(), m);
        }
    }

    #[test]
    fn timetag_frame_sizes() {
        let empty = Message::TimetagBatch { events: vec![] }.to_frame(1);
        assert_eq!(empty.length(), 9);
        let one = Message::TimetagBatch { events: vec![DetectionEvent::new(1, Channel::V)] }.to_frame(1);
        assert_eq!(one.length(), 18);
    }

    #[test]
    fn packed_and_byte_parities() {
        let packed = Message::ParityReply { parities: vec![true; 8], byte_per_parity: false };
        assert_eq!(packed.encode_payload().len(), 1 + 4 + 1);
        let bytes = Message::ParityReply { parities: vec![true; 8], byte_per_parity: true };
        assert_eq!(bytes.encode_payload().len(), 1 + 4 + 8);
    }

    #[test]
    fn basis_masking() {
        assert_eq!(basis_only(Channel::V), Channel::H);
        assert_eq!(basis_only(Channel::Minus), Channel::Plus);
    }

    #[test]
    fn truncated_and_trailing_rejected() {
        for m in samples() {
            let p = m.encode_payload();
            if !p.is_empty() && !matches!(m, Message::Abort { .. }) {
                assert!(Message::decode(m.msg_type(), &p[..p.len() - 1]).is_err(), "{m:?}");
            }
            let mut longer = p.clone();
            longer.push(0);
            if !matches!(m, Message::Abort { .. }) {
                assert!(Message::decode(m.msg_type(), &longer).is_err(), "{m:?}");
            }
        }
        let huge_count = [0xff, 0xff, 0xff, 0xff];
        assert!(Message::decode(MessageType::TimetagBatch, &huge_count).is_err());
    }
}
