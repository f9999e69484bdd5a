use super::AnalysisError;
use crate::model::{h2, Channel, CoincidenceMatrix};

/// Two-link reference coincidence matrix, rows Bob (H, V, +, -), columns Alice. The
/// (-, H) entry is 584,695; the digit-swapped 548,695 disagrees with both the
/// row and column totals.
pub const TABLE3: CoincidenceMatrix = CoincidenceMatrix {
    counts: [
        [39_497, 1_218_454, 393_100, 355_074],
        [1_300_749, 112_793, 682_595, 854_848],
        [680_032, 878_628, 51_217, 1_262_143],
        [584_695, 955_146, 1_374_648, 63_261],
    ],
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberComponents {
    pub total: f64,
    pub x: f64,
    pub z: f64,
    pub errors_z: u64,
    pub errors_x: u64,
    pub sifted: u64,
}

fn cell(m: &CoincidenceMatrix, bob: Channel, alice: Channel) -> u64 {
    m.get(bob, alice)
}

/// Splits the QBER into Z and X error contributions. Equal raw outcomes are
/// errors (the singlet anticorrelates); both components are normalized by
/// the total same-basis count so they add up to the total.
pub fn qber_decompose(m: &CoincidenceMatrix) -> Result<QberComponents, AnalysisError> {
    use Channel::*;
    let errors_z = cell(m, H, H) + cell(m, V, V);
    let errors_x = cell(m, Plus, Plus) + cell(m, Minus, Minus);
    let sifted = errors_z + errors_x + cell(m, H, V) + cell(m, V, H) + cell(m, Plus, Minus) + cell(m, Minus, Plus);
    if sifted == 0 {
        return Err(AnalysisError::NoSameBasis);
    }
    let s = sifted as f64;
    Ok(QberComponents {
        total: (errors_z + errors_x) as f64 / s,
        x: errors_x as f64 / s,
        z: errors_z as f64 / s,
        errors_z,
        errors_x,
        sifted,
    })
}

/// `(anti - corr) / (anti + corr)` over each same-basis 2x2 block.
pub fn visibilities(m: &CoincidenceMatrix) -> Result<(f64, f64), AnalysisError> {
    use Channel::*;
    let vis = |corr: u64, anti: u64, name| {
        if corr + anti == 0 {
            Err(AnalysisError::EmptyBlock(name))
        } else {
            Ok((anti as f64 - corr as f64) / (anti + corr) as f64)
        }
    };
    let vz = vis(cell(m, H, H) + cell(m, V, V), cell(m, H, V) + cell(m, V, H), "Z")?;
    let vx = vis(cell(m, Plus, Plus) + cell(m, Minus, Minus), cell(m, Plus, Minus) + cell(m, Minus, Plus), "X")?;
    Ok((vz, vx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bias {
    pub p0: f64,
    pub p1: f64,
    /// Additional fraction of the key lost to the bias, `1 - h2(p0)`.
    pub extra_fraction: f64,
}

/// Probability of 0 and 1 in Alice's key from her channel totals.
pub fn apriori_bias(m: &CoincidenceMatrix) -> Result<Bias, AnalysisError> {
    let t = m.alice_totals();
    let n0 = t[Channel::H.index()] + t[Channel::Plus.index()];
    let n1 = t[Channel::V.index()] + t[Channel::Minus.index()];
    if n0 + n1 == 0 {
        return Err(AnalysisError::EmptyMatrix);
    }
    let p0 = n0 as f64 / (n0 + n1) as f64;
    Ok(Bias { p0, p1: n1 as f64 / (n0 + n1) as f64, extra_fraction: 1.0 - h2(p0) })
}

/// `(same - diff) / (same + diff)`.
pub fn correlation_from_counts(same: u64, diff: u64) -> f64 {
    if same + diff == 0 {
        0.0
    } else {
        (same as f64 - diff as f64) / (same + diff) as f64
    }
}

/// `|E(a,b) - E(a,b') + E(a',b) + E(a',b')|`, arguments in that order.
pub fn chsh(e: [f64; 4]) -> f64 {
    (e[0] - e[1] + e[2] + e[3]).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshResult {
    pub s: f64,
    pub sigma: f64,
    /// E(a,b), E(a,b'), E(a',b), E(a',b').
    pub correlations: [f64; 4],
}

/// CHSH from one passive-analyzer run: Alice's Z/X arms give a/a', Bob's
/// Z/X arms give b/b'.
pub fn chsh_from_matrix(m: &CoincidenceMatrix) -> ChshResult {
    use Channel::*;
    let block = |a: [Channel; 2], b: [Channel; 2]| {
        let same = m.get(b[0], a[0]) + m.get(b[1], a[1]);
        let diff = m.get(b[1], a[0]) + m.get(b[0], a[1]);
        let e = correlation_from_counts(same, diff);
        let n = (same + diff).max(1) as f64;
        (e, (1.0 - e * e) / n)
    };
    let (z, x) = ([H, V], [Plus, Minus]);
    let parts = [block(z, z), block(z, x), block(x, z), block(x, x)];
    let correlations = parts.map(|p| p.0);
    ChshResult {
        s: chsh(correlations),
        sigma: parts.iter().map(|p| p.1).sum::<f64>().sqrt(),
        correlations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> CoincidenceMatrix {
        CoincidenceMatrix::from_counts([[10; 4]; 4])
    }

    fn perfect() -> CoincidenceMatrix {
        let mut m = CoincidenceMatrix::default();
        for (a, b) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            m.counts[b][a] = 100;
        }
        m
    }

    #[test]
    fn table3_qber() {
        let q = qber_decompose(&TABLE3).unwrap();
        assert_eq!(q.errors_z, 152_290);
        assert_eq!(q.errors_x, 114_478);
        assert_eq!(q.sifted, 5_422_762);
        assert!((q.total - 0.0492).abs() < 0.0005);
        assert!((q.z - 0.0281).abs() < 0.0005);
        assert!((q.x - 0.0211).abs() < 0.0005);
        assert!((q.total - (q.x + q.z)).abs() < 1e-15);
    }

    #[test]
    fn table3_visibilities_and_bias() {
        let (vz, vx) = visibilities(&TABLE3).unwrap();
        assert!((vz - (2_519_203.0 - 152_290.0) / 2_671_493.0).abs() < 1e-12);
        assert!((vx - (2_636_791.0 - 114_478.0) / 2_751_269.0).abs() < 1e-12);
        let b = apriori_bias(&TABLE3).unwrap();
        assert!((b.p0 - 0.4725).abs() < 0.00005);
        assert_eq!(b.p0 + b.p1, 1.0);
        assert!((b.extra_fraction - 0.0022).abs() < 0.00005);
        assert_eq!(TABLE3.total(), 10_806_880);
    }

    #[test]
    fn limiting_matrices() {
        let q = qber_decompose(&perfect()).unwrap();
        assert_eq!((q.total, q.x, q.z), (0.0, 0.0, 0.0));
        assert_eq!(visibilities(&perfect()).unwrap(), (1.0, 1.0));
        let q = qber_decompose(&uniform()).unwrap();
        assert_eq!((q.total, q.x, q.z), (0.5, 0.25, 0.25));
        assert_eq!(visibilities(&uniform()).unwrap(), (0.0, 0.0));
        let b = apriori_bias(&uniform()).unwrap();
        assert_eq!((b.p0, b.extra_fraction), (0.5, 0.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        let m = CoincidenceMatrix::default();
        assert_eq!(qber_decompose(&m).unwrap_err(), AnalysisError::NoSameBasis);
        assert!(visibilities(&m).is_err());
        assert_eq!(apriori_bias(&m).unwrap_err(), AnalysisError::EmptyMatrix);
    }

    #[test]
    fn chsh_limits() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((chsh([-r, r, -r, -r]) - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(chsh([0.0; 4]), 0.0);
    }

    #[test]
    fn qber_matches_visibility_per_basis() {
        let q = qber_decompose(&TABLE3).unwrap();
        let (vz, vx) = visibilities(&TABLE3).unwrap();
        let z_block = 2_671_493.0;
        let x_block = 2_751_269.0;
        assert!((q.errors_z as f64 / z_block - (1.0 - vz) / 2.0).abs() < 1e-12);
        assert!((q.errors_x as f64 / x_block - (1.0 - vx) / 2.0).abs() < 1e-12);
    }
}
