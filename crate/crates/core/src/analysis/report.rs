use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::stats::{qber_decompose, visibilities};
use super::AnalysisError;
use crate::model::{Channel, CoincidenceMatrix};
use crate::netlink::CommLedger;
use crate::privacy::optimal_rate;

/// Per-epoch accounting of one key-generation cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochStats {
    pub epoch_id: u32,
    pub start_s: f64,
    pub duration_s: f64,
    pub offset: i64,
    pub raw_bits: u64,
    pub sifted_bits: u64,
    pub corrected_bits: u64,
    pub secure_bits: u64,
    pub qber_total: f64,
    pub qber_x: f64,
    pub qber_z: f64,
    pub visibility_z: f64,
    pub visibility_x: f64,
    pub leaked_bits: u64,
    pub comm: CommLedger,
    pub matrix: CoincidenceMatrix,
    pub aborted: bool,
}

impl EpochStats {
    /// Fills the raw, sifted and error figures from a coincidence matrix.
    pub fn from_matrix(epoch_id: u32, start_s: f64, duration_s: f64, matrix: CoincidenceMatrix) -> EpochStats {
        let mut s = EpochStats { epoch_id, start_s, duration_s, matrix, raw_bits: matrix.total(), ..Default::default() };
        if let Ok(q) = qber_decompose(&matrix) {
            s.sifted_bits = q.sifted;
            s.qber_total = q.total;
            s.qber_x = q.x;
            s.qber_z = q.z;
        }
        if let Ok((vz, vx)) = visibilities(&matrix) {
            s.visibility_z = vz;
            s.visibility_x = vx;
        }
        s
    }

    /// Final key length with Shannon-limit error correction.
    pub fn optimal_bits(&self) -> u64 {
        optimal_rate(self.sifted_bits, self.qber_total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub epochs: usize,
    pub aborted_epochs: Vec<u32>,
    pub duration_s: f64,
    pub raw_bits: u64,
    pub sifted_bits: u64,
    pub corrected_bits: u64,
    pub optimal_final_bits: u64,
    pub secure_bits: u64,
    pub leaked_bits: u64,
    pub qber: f64,
    pub visibility_z: f64,
    pub visibility_x: f64,
    pub matrix: CoincidenceMatrix,
    pub comm: CommLedger,
}

impl SessionReport {
    pub fn rate(&self, bits: u64) -> f64 {
        if self.duration_s > 0.0 {
            bits as f64 / self.duration_s
        } else {
            0.0
        }
    }
}

pub fn session_report(epochs: &[EpochStats]) -> Result<SessionReport, AnalysisError> {
    if epochs.is_empty() {
        return Err(AnalysisError::NoEpochs);
    }
    let mut matrix = CoincidenceMatrix::default();
    let mut comm = CommLedger::default();
    for e in epochs {
        matrix.merge(&e.matrix);
        comm.merge(&e.comm);
    }
    let sum = |f: fn(&EpochStats) -> u64| epochs.iter().map(f).sum::<u64>();
    let sifted_bits = sum(|e| e.sifted_bits);
    let qber = match qber_decompose(&matrix) {
        Ok(q) => q.total,
        Err(_) if sifted_bits > 0 => {
            epochs.iter().map(|e| e.qber_total * e.sifted_bits as f64).sum::<f64>() / sifted_bits as f64
        }
        Err(_) => 0.0,
    };
    let (visibility_z, visibility_x) = visibilities(&matrix).unwrap_or_else(|_| weighted_visibilities(epochs));
    Ok(SessionReport {
        epochs: epochs.len(),
        aborted_epochs: epochs.iter().filter(|e| e.aborted).map(|e| e.epoch_id).collect(),
        duration_s: epochs.iter().map(|e| e.duration_s).sum(),
        raw_bits: sum(|e| e.raw_bits),
        sifted_bits,
        corrected_bits: sum(|e| e.corrected_bits),
        optimal_final_bits: sum(|e| e.optimal_bits()),
        secure_bits: sum(|e| e.secure_bits),
        leaked_bits: sum(|e| e.leaked_bits),
        qber,
        visibility_z,
        visibility_x,
        matrix,
        comm,
    })
}

/// Sifted-bit weighted mean of the epoch visibilities, for reports built
/// from node-local epochs that carry no coincidence matrix.
fn weighted_visibilities(epochs: &[EpochStats]) -> (f64, f64) {
    let weight: u64 = epochs.iter().map(|e| e.sifted_bits).sum();
    if weight == 0 {
        return (0.0, 0.0);
    }
    let mean = |f: fn(&EpochStats) -> f64| {
        epochs.iter().map(|e| f(e) * e.sifted_bits as f64).sum::<f64>() / weight as f64
    };
    (mean(|e| e.visibility_z), mean(|e| e.visibility_x))
}

impl fmt::Display for SessionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epochs           {} ({} aborted)", self.epochs, self.aborted_epochs.len())?;
        writeln!(f, "duration         {:.1} s", self.duration_s)?;
        for (name, bits) in [
            ("raw", self.raw_bits),
            ("sifted", self.sifted_bits),
            ("optimal final", self.optimal_final_bits),
            ("actual final", self.secure_bits),
            ("parities leaked", self.leaked_bits),
        ] {
            writeln!(f, "{name:<16} {bits} bits ({:.1} bits/s)", self.rate(bits))?;
        }
        writeln!(f, "QBER             {:.2}%", 100.0 * self.qber)?;
        write!(f, "visibility       Z {:.1}%, X {:.1}%", 100.0 * self.visibility_z, 100.0 * self.visibility_x)
    }
}

/// 4x4 matrix with channel totals, rows Bob and columns Alice.
pub fn write_coincidence_matrix_csv<W: Write>(mut w: W, m: &CoincidenceMatrix) -> io::Result<()> {
    writeln!(w, "bob\\alice,H,V,+,-,Total")?;
    let bob_totals = m.bob_totals();
    for b in Channel::ALL {
        write!(w, "{b}")?;
        for a in Channel::ALL {
            write!(w, ",{}", m.get(b, a))?;
        }
        writeln!(w, ",{}", bob_totals[b.index()])?;
    }
    let t = m.alice_totals();
    writeln!(w, "Total,{},{},{},{},{}", t[0], t[1], t[2], t[3], m.total())?;
    w.flush()
}

/// Figure data: QBER, key rates and visibilities per epoch, plus the
/// session coincidence matrix when one is known.
pub fn write_report_csvs(dir: &Path, epochs: &[EpochStats], report: &SessionReport) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
    let rate = |bits: u64, e: &EpochStats| if e.duration_s > 0.0 { bits as f64 / e.duration_s } else { 0.0 };

    let mut w = open("qber_timeseries.csv")?;
    writeln!(w, "time_s,qber_total,qber_x,qber_z")?;
    for e in epochs {
        writeln!(w, "{},{:.6},{:.6},{:.6}", e.start_s, e.qber_total, e.qber_x, e.qber_z)?;
    }
    w.flush()?;

    let mut w = open("key_rates.csv")?;
    writeln!(w, "time_s,raw,sifted,optimal_final,actual_final")?;
    for e in epochs {
        writeln!(
            w,
            "{},{:.3},{:.3},{:.3},{:.3}",
            e.start_s,
            rate(e.raw_bits, e),
            rate(e.sifted_bits, e),
            rate(e.optimal_bits(), e),
            rate(e.secure_bits, e)
        )?;
    }
    w.flush()?;

    let mut w = open("visibilities.csv")?;
    writeln!(w, "time_s,visibility_z,visibility_x")?;
    for e in epochs {
        writeln!(w, "{},{:.6},{:.6}", e.start_s, e.visibility_z, e.visibility_x)?;
    }
    w.flush()?;

    if report.matrix.total() > 0 {
        write_coincidence_matrix_csv(open("coincidence_matrix.csv")?, &report.matrix)?;
    }
    Ok(())
}
