use crate::model::{Basis, CoincidenceMatrix, CoincidentPair, KeyBuffer, KeyStage};

#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    pub raw_pairs: Vec<CoincidentPair>,
    pub sifted_bits_alice: KeyBuffer,
    pub sifted_bits_bob: KeyBuffer,
    /// Joint outcomes of every pair, matched bases or not.
    pub matrix: CoincidenceMatrix,
    /// Index into `raw_pairs` of each sifted bit.
    pub kept: Vec<usize>,
    /// Basis of each sifted bit.
    pub bases: Vec<Basis>,
}

pub const SIFT_CSV_HEADER: &str = "epoch,offset,pairs,sifted,qber_estimate";

impl SiftResult {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Fraction of sifted positions where the two keys disagree.
    pub fn qber(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.sifted_bits_alice.hamming_distance(&self.sifted_bits_bob) as f64 / self.len() as f64
    }

    pub fn csv_row(&self, offset: i64) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.sifted_bits_alice.epoch_id,
            offset,
            self.raw_pairs.len(),
            self.len(),
            self.qber()
        )
    }
}

/// Keeps matched-basis pairs. Bob's bit is complemented because the source
/// state anticorrelates same-basis outcomes.
pub fn sift(pairs: &[CoincidentPair], epoch_id: u32) -> SiftResult {
    let mut matrix = CoincidenceMatrix::default();
    let mut alice = Vec::new();
    let mut bob = Vec::new();
    let mut kept = Vec::new();
    let mut bases = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        matrix.record(p.alice_channel, p.bob_channel);
        if p.alice_channel.basis() == p.bob_channel.basis() {
            alice.push(p.alice_channel.bit());
            bob.push(!p.bob_channel.bit());
            kept.push(i);
            bases.push(p.alice_channel.basis());
        }
    }
    SiftResult {
        raw_pairs: pairs.to_vec(),
        sifted_bits_alice: KeyBuffer::new(alice, KeyStage::Sifted, epoch_id),
        sifted_bits_bob: KeyBuffer::new(bob, KeyStage::Sifted, epoch_id),
        matrix,
        kept,
        bases,
    }
}
