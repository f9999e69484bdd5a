//! Byte accounting per traffic category. Frame sizes exclude the 4-byte
//! length prefix, which is counted as transport overhead.

use std::io::{self, Write};

use super::frame::{Frame, MessageType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Coincidence = 0,
    ErrorEstimation = 1,
    ErrorCorrection = 2,
    PrivacyAmp = 3,
    Control = 4,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Coincidence,
        Category::ErrorEstimation,
        Category::ErrorCorrection,
        Category::PrivacyAmp,
        Category::Control,
    ];

    pub fn of(t: MessageType) -> Category {
        use MessageType::*;
        match t {
            TimetagBatch | CoincIndices | BasisReveal => Category::Coincidence,
            EreSample => Category::ErrorEstimation,
            ShuffleSeed | ParityRequest | ParityReply => Category::ErrorCorrection,
            PaParams | HashVerify => Category::PrivacyAmp,
            Hello | ClockSync | EpochResult | Abort => Category::Control,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommLedger {
    pub sent: [u64; 5],
    pub received: [u64; 5],
}

impl CommLedger {
    pub fn record_sent(&mut self, frame: &Frame) {
        self.sent[Category::of(frame.msg_type) as usize] += frame.length() as u64;
    }

    pub fn record_received(&mut self, frame: &Frame) {
        self.received[Category::of(frame.msg_type) as usize] += frame.length() as u64;
    }

    pub fn sent_in(&self, c: Category) -> u64 {
        self.sent[c as usize]
    }

    pub fn received_in(&self, c: Category) -> u64 {
        self.received[c as usize]
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received.iter().sum()
    }

    pub fn merge(&mut self, other: &CommLedger) {
        for i in 0..5 {
            self.sent[i] += other.sent[i];
            self.received[i] += other.received[i];
        }
    }
}

pub const COMM_LOAD_HEADER: &str = "Coin Sent,Coin Rec,ERE Sent,ERE Rec,EC Sent,EC Rec";

/// Average load in bytes per second for the coincidence, error-estimation
/// and error-correction categories.
pub fn write_comm_load_csv<W: Write>(mut w: W, ledger: &CommLedger, duration_s: f64) -> io::Result<()> {
    let rate = |b: u64| if duration_s > 0.0 { b as f64 / duration_s } else { 0.0 };
    writeln!(w, "{COMM_LOAD_HEADER}")?;
    let mut cols = Vec::new();
    for c in [Category::Coincidence, Category::ErrorEstimation, Category::ErrorCorrection] {
        cols.push(format!("{:.1}", rate(ledger.sent_in(c))));
        cols.push(format!("{:.1}", rate(ledger.received_in(c))));
    }
    writeln!(w, "{}", cols.join(","))?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_and_csv() {
        let mut l = CommLedger::default();
        l.record_sent(&Frame::new(MessageType::TimetagBatch, 1, vec![0; 13]));
        l.record_received(&Frame::new(MessageType::ParityReply, 1, vec![0; 3]));
        assert_eq!(l.sent_in(Category::Coincidence), 18);
        assert_eq!(l.received_in(Category::ErrorCorrection), 8);
        let mut out = Vec::new();
        write_comm_load_csv(&mut out, &l, 2.0).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{COMM_LOAD_HEADER}\n9.0,0.0,0.0,0.0,0.0,4.0\n"));
    }
}
