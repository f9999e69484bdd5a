//! Per-node output files: the pair log and per-epoch statistics, and the
//! join of both nodes' logs into the full coincidence matrix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ledger::CommLedger;
use super::NetError;
use crate::analysis::EpochStats;
use crate::model::{Basis, Channel, CoincidenceMatrix};

pub const PAIRS_FILE: &str = "pairs.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const COMM_LOAD_FILE: &str = "comm_load.csv";
pub const KEYS_DIR: &str = "keys";

/// One coincidence as seen by one node. Both nodes number the pairs of an
/// epoch identically, so the two logs join on `(epoch, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub epoch: u32,
    pub index: u32,
    /// Local clock, ticks.
    pub time: u64,
    pub channel: Channel,
    pub peer_basis: Basis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
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
    pub aborted: bool,
    pub coin_sent: u64,
    pub coin_rec: u64,
    pub ere_sent: u64,
    pub ere_rec: u64,
    pub ec_sent: u64,
    pub ec_rec: u64,
    pub pa_sent: u64,
    pub pa_rec: u64,
    pub control_sent: u64,
    pub control_rec: u64,
}

impl From<&EpochStats> for EpochRow {
    fn from(e: &EpochStats) -> Self {
        let (s, r) = (e.comm.sent, e.comm.received);
        EpochRow {
            epoch: e.epoch_id,
            start_s: e.start_s,
            duration_s: e.duration_s,
            offset: e.offset,
            raw_bits: e.raw_bits,
            sifted_bits: e.sifted_bits,
            corrected_bits: e.corrected_bits,
            secure_bits: e.secure_bits,
            qber_total: e.qber_total,
            qber_x: e.qber_x,
            qber_z: e.qber_z,
            visibility_z: e.visibility_z,
            visibility_x: e.visibility_x,
            leaked_bits: e.leaked_bits,
            aborted: e.aborted,
            coin_sent: s[0],
            coin_rec: r[0],
            ere_sent: s[1],
            ere_rec: r[1],
            ec_sent: s[2],
            ec_rec: r[2],
            pa_sent: s[3],
            pa_rec: r[3],
            control_sent: s[4],
            control_rec: r[4],
        }
    }
}

impl From<&EpochRow> for EpochStats {
    fn from(r: &EpochRow) -> Self {
        EpochStats {
            epoch_id: r.epoch,
            start_s: r.start_s,
            duration_s: r.duration_s,
            offset: r.offset,
            raw_bits: r.raw_bits,
            sifted_bits: r.sifted_bits,
            corrected_bits: r.corrected_bits,
            secure_bits: r.secure_bits,
            qber_total: r.qber_total,
            qber_x: r.qber_x,
            qber_z: r.qber_z,
            visibility_z: r.visibility_z,
            visibility_x: r.visibility_x,
            leaked_bits: r.leaked_bits,
            comm: CommLedger {
                sent: [r.coin_sent, r.ere_sent, r.ec_sent, r.pa_sent, r.control_sent],
                received: [r.coin_rec, r.ere_rec, r.ec_rec, r.pa_rec, r.control_rec],
            },
            matrix: CoincidenceMatrix::default(),
            aborted: r.aborted,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), NetError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, NetError> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn write_pairs_csv(path: &Path, pairs: &[PairRecord]) -> Result<(), NetError> {
    write_rows(path, pairs)
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairRecord>, NetError> {
    read_rows(path)
}

pub fn write_epochs_csv(path: &Path, epochs: &[EpochStats]) -> Result<(), NetError> {
    write_rows(path, epochs.iter().map(EpochRow::from))
}

pub fn read_epochs_csv(path: &Path) -> Result<Vec<EpochStats>, NetError> {
    Ok(read_rows::<EpochRow>(path)?.iter().map(EpochStats::from).collect())
}

/// Per-epoch matrices from both pair logs. Pairs present in only one log
/// are ignored.
pub fn join_pair_logs(alice: &[PairRecord], bob: &[PairRecord]) -> BTreeMap<u32, CoincidenceMatrix> {
    let bob_by_key: std::collections::HashMap<(u32, u32), Channel> =
        bob.iter().map(|p| ((p.epoch, p.index), p.channel)).collect();
    let mut out: BTreeMap<u32, CoincidenceMatrix> = BTreeMap::new();
    for a in alice {
        if let Some(&b) = bob_by_key.get(&(a.epoch, a.index)) {
            out.entry(a.epoch).or_default().record(a.channel, b);
        }
    }
    out
}

/// Session epochs from Alice's statistics with the measured figures
/// replaced by those of the joined coincidence matrix.
pub fn combine_epochs(
    alice_epochs: &[EpochStats],
    matrices: &BTreeMap<u32, CoincidenceMatrix>,
) -> Vec<EpochStats> {
    alice_epochs
        .iter()
        .map(|a| {
            let Some(m) = matrices.get(&a.epoch_id) else {
                return a.clone();
            };
            let mut e = EpochStats::from_matrix(a.epoch_id, a.start_s, a.duration_s, *m);
            e.offset = a.offset;
            e.corrected_bits = a.corrected_bits;
            e.secure_bits = a.secure_bits;
            e.leaked_bits = a.leaked_bits;
            e.comm = a.comm;
            e.aborted = a.aborted;
            e
        })
        .collect()
}

/// Reads `alice/` and `bob/` under `dir` and combines them.
pub fn load_session_dir(dir: &Path) -> Result<Vec<EpochStats>, NetError> {
    let a = read_epochs_csv(&dir.join("alice").join(EPOCHS_FILE))?;
    let pa = read_pairs_csv(&dir.join("alice").join(PAIRS_FILE))?;
    let pb = read_pairs_csv(&dir.join("bob").join(PAIRS_FILE))?;
    Ok(combine_epochs(&a, &join_pair_logs(&pa, &pb)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_and_epoch_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![
            PairRecord { epoch: 1, index: 0, time: 5, channel: Channel::Plus, peer_basis: Basis::X },
            PairRecord { epoch: 1, index: 1, time: 9, channel: Channel::V, peer_basis: Basis::Z },
        ];
        let p = dir.path().join(PAIRS_FILE);
        write_pairs_csv(&p, &pairs).unwrap();
        assert_eq!(read_pairs_csv(&p).unwrap(), pairs);

        let mut e = EpochStats { epoch_id: 2, duration_s: 1.0, secure_bits: 77, qber_total: 0.03, ..Default::default() };
        e.comm.sent = [1, 2, 3, 4, 5];
        e.comm.received = [6, 7, 8, 9, 10];
        let p = dir.path().join(EPOCHS_FILE);
        write_epochs_csv(&p, std::slice::from_ref(&e)).unwrap();
        assert_eq!(read_epochs_csv(&p).unwrap(), vec![e]);
    }

    #[test]
    fn join_builds_matrix() {
        let rec = |epoch, index, channel| PairRecord { epoch, index, time: 0, channel, peer_basis: Basis::Z };
        let alice = vec![rec(1, 0, Channel::H), rec(1, 1, Channel::Plus), rec(2, 0, Channel::V)];
        let bob = vec![rec(1, 0, Channel::V), rec(1, 1, Channel::H), rec(2, 0, Channel::H), rec(2, 1, Channel::H)];
        let m = join_pair_logs(&alice, &bob);
        assert_eq!(m[&1].get(Channel::V, Channel::H), 1);
        assert_eq!(m[&1].get(Channel::H, Channel::Plus), 1);
        assert_eq!(m[&2].total(), 1);
    }
}
