//! Framed, accounted message exchange over any byte stream, plus an
//! in-memory duplex pipe and TCP helpers.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use super::frame::{Frame, FrameError, MAX_PAYLOAD};
use super::ledger::CommLedger;
use super::messages::{Message, TIMETAG_BYTES};
use super::NetError;
use crate::model::DetectionEvent;

/// Largest number of timetags in one frame.
pub const MAX_EVENTS_PER_FRAME: usize = (MAX_PAYLOAD - 4) / TIMETAG_BYTES;

pub struct Link<S> {
    stream: S,
    epoch_ledger: CommLedger,
    total: CommLedger,
}

impl<S: Read + Write> Link<S> {
    pub fn new(stream: S) -> Self {
        Link { stream, epoch_ledger: CommLedger::default(), total: CommLedger::default() }
    }

    pub fn send(&mut self, epoch: u32, msg: &Message) -> Result<(), NetError> {
        let frame = msg.to_frame(epoch);
        frame.write_to(&mut self.stream)?;
        self.stream.flush().map_err(FrameError::Io)?;
        self.epoch_ledger.record_sent(&frame);
        self.total.record_sent(&frame);
        Ok(())
    }

    pub fn recv(&mut self) -> Result<(u32, Message), NetError> {
        let frame = Frame::read_from(&mut self.stream)?;
        self.epoch_ledger.record_received(&frame);
        self.total.record_received(&frame);
        let msg = Message::from_frame(&frame)?;
        Ok((frame.epoch, msg))
    }

    /// Sends a timetag batch, split over continuation frames when it exceeds
    /// the frame size limit. An empty batch still produces one frame.
    pub fn send_timetags(&mut self, epoch: u32, events: &[DetectionEvent]) -> Result<(), NetError> {
        if events.is_empty() {
            return self.send(epoch, &Message::TimetagBatch { events: Vec::new() });
        }
        for chunk in events.chunks(MAX_EVENTS_PER_FRAME) {
            self.send(epoch, &Message::TimetagBatch { events: chunk.to_vec() })?;
        }
        Ok(())
    }

    /// Receives `total` timetags announced beforehand by clock sync.
    /// Other messages are handed to `unexpected`, which decides the error.
    pub fn recv_timetags(
        &mut self,
        epoch: u32,
        total: usize,
        mut unexpected: impl FnMut(u32, Message) -> NetError,
    ) -> Result<Vec<DetectionEvent>, NetError> {
        let mut out = Vec::with_capacity(total);
        loop {
            match self.recv()? {
                (e, Message::TimetagBatch { events }) if e == epoch => {
                    if out.len() + events.len() > total {
                        return Err(NetError::Protocol(format!(
                            "timetag batch overruns the announced {total} events"
                        )));
                    }
                    out.extend(events);
                    if out.len() == total {
                        return Ok(out);
                    }
                }
                (e, m) => return Err(unexpected(e, m)),
            }
        }
    }

    /// Traffic since the previous call.
    pub fn take_epoch_ledger(&mut self) -> CommLedger {
        std::mem::take(&mut self.epoch_ledger)
    }

    pub fn total_ledger(&self) -> CommLedger {
        self.total
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

/// One end of an in-memory byte pipe. Dropping an end closes the peer's
/// read side.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
}

pub fn duplex() -> (PipeEnd, PipeEnd) {
    let (atx, brx) = channel();
    let (btx, arx) = channel();
    (
        PipeEnd { tx: atx, rx: arx, pending: Vec::new(), pos: 0 },
        PipeEnd { tx: btx, rx: brx, pending: Vec::new(), pos: 0 },
    )
}

impl Read for PipeEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.pos == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed the pipe"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Buffered TCP stream with Nagle disabled.
pub struct TcpTransport {
    reader: io::BufReader<TcpStream>,
    writer: io::BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let w = stream.try_clone()?;
        Ok(TcpTransport { reader: io::BufReader::new(stream), writer: io::BufWriter::new(w) })
    }
}

impl Read for TcpTransport {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.reader.read(buf)
    }
}

impl Write for TcpTransport {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Accepts a single peer.
pub fn accept_one(listener: &TcpListener) -> io::Result<TcpTransport> {
    let (stream, _) = listener.accept()?;
    TcpTransport::new(stream)
}

/// Connects, retrying while the listener comes up.
pub fn connect_with_retry(addr: impl ToSocketAddrs + Copy, attempts: u32, pause: Duration) -> io::Result<TcpTransport> {
    let mut last = io::Error::other("no connection attempts made");
    for _ in 0..attempts.max(1) {
        match TcpStream::connect(addr) {
            Ok(s) => return TcpTransport::new(s),
            Err(e) => {
                last = e;
                std::thread::sleep(pause);
            }
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;
    use crate::netlink::ledger::Category;

    #[test]
    fn pipe_carries_frames_both_ways() {
        let (a, b) = duplex();
        let t = std::thread::spawn(move || {
            let mut link = Link::new(b);
            let (e, m) = link.recv().unwrap();
            link.send(e, &m).unwrap();
        });
        let mut link = Link::new(a);
        let msg = Message::ClockSync { epoch_start: 5, event_count: 9 };
        link.send(3, &msg).unwrap();
        assert_eq!(link.recv().unwrap(), (3, msg));
        t.join().unwrap();
        let l = link.take_epoch_ledger();
        assert_eq!(l.sent_in(Category::Control), 17);
        assert_eq!(l.received_in(Category::Control), 17);
        assert_eq!(link.take_epoch_ledger(), CommLedger::default());
    }

    #[test]
    fn closed_peer_is_an_error() {
        let (a, b) = duplex();
        drop(b);
        let mut link = Link::new(a);
        assert!(link.recv().is_err());
    }

    #[test]
    fn timetags_reassemble() {
        let (a, b) = duplex();
        let events: Vec<DetectionEvent> = (0..1000).map(|i| DetectionEvent::new(i * 7, Channel::Plus)).collect();
        let sent = events.clone();
        let t = std::thread::spawn(move || {
            let mut link = Link::new(a);
            link.send_timetags(2, &sent).unwrap();
        });
        let mut link = Link::new(b);
        let got = link.recv_timetags(2, 1000, |_, m| NetError::Protocol(format!("{m:?}"))).unwrap();
        assert_eq!(got, events);
        t.join().unwrap();
    }
}
