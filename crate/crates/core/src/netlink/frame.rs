//! Wire framing: `length: u32 BE | msg_type: u8 | epoch: u32 BE | payload`,
//! where `length` counts everything after itself.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0,
    ClockSync = 1,
    TimetagBatch = 2,
    CoincIndices = 3,
    BasisReveal = 4,
    EreSample = 5,
    ParityRequest = 6,
    ParityReply = 7,
    ShuffleSeed = 8,
    PaParams = 9,
    HashVerify = 10,
    EpochResult = 11,
    Abort = 12,
}

impl MessageType {
    pub const ALL: [MessageType; 13] = [
        MessageType::Hello,
        MessageType::ClockSync,
        MessageType::TimetagBatch,
        MessageType::CoincIndices,
        MessageType::BasisReveal,
        MessageType::EreSample,
        MessageType::ParityRequest,
        MessageType::ParityReply,
        MessageType::ShuffleSeed,
        MessageType::PaParams,
        MessageType::HashVerify,
        MessageType::EpochResult,
        MessageType::Abort,
    ];

    pub fn from_code(code: u8) -> Option<MessageType> {
        MessageType::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("frame length {0} below header size")]
    TooShort(u32),
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    TooLarge(usize),
    #[error("unknown message type {0}")]
    UnknownType(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub epoch: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, epoch: u32, payload: Vec<u8>) -> Frame {
        Frame { msg_type, epoch, payload }
    }

    /// Value of the length field: header plus payload.
    pub fn length(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(self.payload.len()));
        }
        let mut out = Vec::with_capacity(4 + self.length());
        out.extend_from_slice(&(self.length() as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed, or `None` if more input is needed.
    pub fn decode(bytes: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
        if bytes.len() < 4 {
            return Ok(None);
        }
        let length = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        let payload_len = Self::check_length(length)?;
        let total = 4 + HEADER_LEN + payload_len;
        if bytes.len() < total {
            return Ok(None);
        }
        let msg_type = MessageType::from_code(bytes[4]).ok_or(FrameError::UnknownType(bytes[4]))?;
        let epoch = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes"));
        Ok(Some((Frame { msg_type, epoch, payload: bytes[9..total].to_vec() }, total)))
    }

    fn check_length(length: u32) -> Result<usize, FrameError> {
        if (length as usize) < HEADER_LEN {
            return Err(FrameError::TooShort(length));
        }
        let payload = length as usize - HEADER_LEN;
        if payload > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(payload));
        }
        Ok(payload)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FrameError> {
        w.write_all(&self.encode()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let payload_len = Self::check_length(u32::from_be_bytes(len))?;
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        let msg_type = MessageType::from_code(header[0]).ok_or(FrameError::UnknownType(header[0]))?;
        let epoch = u32::from_be_bytes(header[1..].try_into().expect("4 bytes"));
        let mut payload = vec![0u8; payload_len];
        r.read_exact(&mut payload)?;
        Ok(Frame { msg_type, epoch, payload })
    }
}
