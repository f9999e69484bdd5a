//! Binary timetag files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TTAG" | version: u8 = 1 | count: u64 | count x (tick: u64, channel: u8)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Channel, DetectionEvent, ModelError, Tick};

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 13;
pub const EVENT_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum TimetagError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("event {index}: {source}")]
    BadEvent { index: u64, source: ModelError },
}

pub fn encode_event(e: &DetectionEvent, out: &mut Vec<u8>) {
    out.extend_from_slice(&e.time.0.to_le_bytes());
    out.push(e.channel.code());
}

pub fn decode_event(buf: &[u8; EVENT_LEN]) -> Result<DetectionEvent, ModelError> {
    let mut tick = [0u8; 8];
    tick.copy_from_slice(&buf[..8]);
    Ok(DetectionEvent { time: Tick(u64::from_le_bytes(tick)), channel: Channel::from_code(buf[8])? })
}

pub fn write_events<W: Write>(mut w: W, events: &[DetectionEvent]) -> Result<(), TimetagError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(events.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(EVENT_LEN * 4096);
    for chunk in events.chunks(4096) {
        buf.clear();
        for e in chunk {
            encode_event(e, &mut buf);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(mut r: R) -> Result<Vec<DetectionEvent>, TimetagError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TimetagError::BadMagic(magic));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(TimetagError::BadVersion(version[0]));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count);
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; EVENT_LEN];
    for index in 0..count {
        r.read_exact(&mut buf)?;
        events.push(decode_event(&buf).map_err(|source| TimetagError::BadEvent { index, source })?);
    }
    Ok(events)
}

pub fn write_file(path: &Path, events: &[DetectionEvent]) -> Result<(), TimetagError> {
    write_events(BufWriter::new(File::create(path)?), events)
}

pub fn read_file(path: &Path) -> Result<Vec<DetectionEvent>, TimetagError> {
    read_events(BufReader::new(File::open(path)?))
}
