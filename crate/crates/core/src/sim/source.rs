//! Polarization-entangled pair source and passive analyzer statistics.
//!
//! Linear polarization measurements at angle `a` correspond to the Bloch
//! direction `(sin 2a, 0, cos 2a)`. The source emits the singlet with its
//! H/V and diagonal correlations reduced by the per-basis visibilities, so
//!
//! ```text
//! E(a, b) = -(v_z cos 2a cos 2b + v_x cos(phase) sin 2a sin 2b)
//! ```
//!
//! where E = P(same bit) - P(different bit). With equal visibilities V and
//! zero phase this is the familiar `-V cos 2(a - b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Basis, Channel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceModel {
    /// Pairs per second emitted into the collected modes.
    pub pair_rate: f64,
    /// Photons per second emitted toward each receiver, paired or not.
    pub singles_rate_per_side: f64,
    pub visibility_z: f64,
    pub visibility_x: f64,
    /// Relative phase of the two-photon state, radians.
    pub state_phase: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            pair_rate: 12_000.0,
            singles_rate_per_side: 100_000.0,
            visibility_z: 0.996,
            visibility_x: 0.91,
            state_phase: 0.0,
        }
    }
}

/// Rotation of one passive analysis box. The Z arm measures at the rotation
/// angle, the X arm 45 degrees further.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub rotation_angle: f64,
}

impl AnalyzerSetting {
    pub fn new(rotation_angle: f64) -> Self {
        AnalyzerSetting { rotation_angle }
    }

    /// Polarization angle (degrees) measured by the given basis arm.
    pub fn angle(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.rotation_angle,
            Basis::X => self.rotation_angle + 45.0,
        }
    }
}

/// Correlation E(a, b) for measurement angles in degrees.
pub fn correlation(source: &SourceModel, alice_deg: f64, bob_deg: f64) -> f64 {
    let a = 2.0 * alice_deg.to_radians();
    let b = 2.0 * bob_deg.to_radians();
    -(source.visibility_z * a.cos() * b.cos()
        + source.visibility_x * source.state_phase.cos() * a.sin() * b.sin())
}

/// Samples the two outcome bits for fixed measurement angles. Marginals are
/// uniform; the bits agree with probability (1 + E) / 2.
pub fn correlated_bits<R: Rng + ?Sized>(
    source: &SourceModel,
    alice_deg: f64,
    bob_deg: f64,
    rng: &mut R,
) -> (bool, bool) {
    let e = correlation(source, alice_deg, bob_deg);
    let alice_bit: bool = rng.random();
    let same = rng.random::<f64>() < (1.0 + e) / 2.0;
    (alice_bit, if same { alice_bit } else { !alice_bit })
}

/// One pair through both passive analyzers: each side picks its basis with
/// a 50/50 beamsplitter, then the bits follow singlet statistics.
pub fn joint_outcome<R: Rng + ?Sized>(
    source: &SourceModel,
    angles: (AnalyzerSetting, AnalyzerSetting),
    rng: &mut R,
) -> (Channel, Channel) {
    let alice_basis = if rng.random::<bool>() { Basis::X } else { Basis::Z };
    let bob_basis = if rng.random::<bool>() { Basis::X } else { Basis::Z };
    let (a, b) = correlated_bits(source, angles.0.angle(alice_basis), angles.1.angle(bob_basis), rng);
    (Channel::from_basis_bit(alice_basis, a), Channel::from_basis_bit(bob_basis, b))
}

/// Exact joint channel distribution, indexed `[bob][alice]`.
pub fn joint_distribution(source: &SourceModel, angles: (AnalyzerSetting, AnalyzerSetting)) -> [[f64; 4]; 4] {
    let mut p = [[0.0; 4]; 4];
    for a in Channel::ALL {
        for b in Channel::ALL {
            let e = correlation(source, angles.0.angle(a.basis()), angles.1.angle(b.basis()));
            let same = if a.bit() == b.bit() { (1.0 + e) / 2.0 } else { (1.0 - e) / 2.0 };
            p[b.index()][a.index()] = 0.25 * 0.5 * same;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ideal(v: f64) -> SourceModel {
        SourceModel { visibility_z: v, visibility_x: v, ..SourceModel::default() }
    }

    #[test]
    fn perfect_singlet_same_angle_always_opposite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = ideal(1.0);
        for _ in 0..10_000 {
            let (a, b) = correlated_bits(&s, 0.0, 0.0, &mut rng);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn zero_visibility_is_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ideal(0.0);
        let n = 200_000;
        let mut same = 0;
        let mut ones = 0;
        for _ in 0..n {
            let (a, b) = correlated_bits(&s, 0.0, 0.0, &mut rng);
            same += (a == b) as u32;
            ones += a as u32;
        }
        let sigma = (0.25 / n as f64).sqrt();
        assert!((same as f64 / n as f64 - 0.5).abs() < 4.0 * sigma);
        assert!((ones as f64 / n as f64 - 0.5).abs() < 4.0 * sigma);
    }

    #[test]
    fn equal_bit_frequency_at_22_5_degrees() {
        // Closed form sin^2(22.5 deg); brute-force frequency over 10^6 draws.
        let expected = 22.5f64.to_radians().sin().powi(2);
        assert!((expected - 0.146_446_609).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ideal(1.0);
        let n = 1_000_000;
        let same = (0..n)
            .filter(|_| {
                let (a, b) = correlated_bits(&s, 0.0, 22.5, &mut rng);
                a == b
            })
            .count();
        let f = same as f64 / n as f64;
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((f - expected).abs() < 4.0 * sigma, "{f}");
    }

    #[test]
    fn joint_distribution_normalized_and_matches_visibility() {
        let s = SourceModel { visibility_z: 0.9, visibility_x: 0.8, ..SourceModel::default() };
        let p = joint_distribution(&s, Default::default());
        let total: f64 = p.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let z_err = p[0][0] + p[1][1];
        let z_all = z_err + p[0][1] + p[1][0];
        assert!((z_err / z_all - 0.05).abs() < 1e-12);
        let x_err = p[2][2] + p[3][3];
        let x_all = x_err + p[2][3] + p[3][2];
        assert!((x_err / x_all - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sampled_outcomes_follow_distribution() {
        let s = SourceModel { visibility_z: 0.9, visibility_x: 0.8, ..SourceModel::default() };
        let p = joint_distribution(&s, Default::default());
        let mut counts = [[0u32; 4]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400_000;
        for _ in 0..n {
            let (a, b) = joint_outcome(&s, Default::default(), &mut rng);
            counts[b.index()][a.index()] += 1;
        }
        for b in 0..4 {
            for a in 0..4 {
                let f = counts[b][a] as f64 / n as f64;
                let sigma = (p[b][a] * (1.0 - p[b][a]) / n as f64).sqrt();
                assert!((f - p[b][a]).abs() < 5.0 * sigma + 1e-9, "cell {b},{a}");
            }
        }
    }
}
