use crate::model::h2;

/// QBER at and above which no key is produced.
pub const COHERENT_ATTACK_LIMIT: f64 = 0.11;
pub const DEFAULT_SAFETY_BITS: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecureLengthInputs {
    /// Key length after error correction.
    pub n_raw: u64,
    pub qber: f64,
    pub n_leakage: u64,
    pub n_safety: u64,
    /// Probability of a 0 in Alice's key, when the bias is accounted for.
    pub p0: Option<f64>,
}

/// `floor(n_raw * (c - h2(qber))) - leakage - safety`, clamped at 0, where
/// the entropy ceiling `c` is 1, or `h2(p0)` for a biased key.
pub fn secure_length(inputs: &SecureLengthInputs) -> u64 {
    if !(inputs.qber < COHERENT_ATTACK_LIMIT) || inputs.qber < 0.0 {
        return 0;
    }
    let ceiling = inputs.p0.map_or(1.0, h2);
    let kept = (inputs.n_raw as f64 * (ceiling - h2(inputs.qber))).floor();
    let n = kept as i128 - inputs.n_leakage as i128 - inputs.n_safety as i128;
    n.max(0) as u64
}

/// Final key length with error correction at the Shannon limit:
/// `floor(sifted * (1 - 2 h2(qber)))`.
pub fn optimal_rate(sifted_bits: u64, qber: f64) -> u64 {
    if !(qber < COHERENT_ATTACK_LIMIT) || qber < 0.0 {
        return 0;
    }
    (sifted_bits as f64 * (1.0 - 2.0 * h2(qber))).floor().max(0.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(n_raw: u64, qber: f64, n_leakage: u64, n_safety: u64) -> SecureLengthInputs {
        SecureLengthInputs { n_raw, qber, n_leakage, n_safety, p0: None }
    }

    #[test]
    fn error_free_key_loses_only_safety() {
        assert_eq!(secure_length(&inputs(1000, 0.0, 0, 30)), 970);
    }

    #[test]
    fn above_threshold_gives_nothing() {
        assert_eq!(secure_length(&inputs(1_000_000, 0.12, 0, 0)), 0);
        assert_eq!(secure_length(&inputs(1_000_000, 0.11, 0, 0)), 0);
        assert_eq!(optimal_rate(1_000_000, 0.11), 0);
    }

    #[test]
    fn bias_costs_point_two_two_percent() {
        let n = 10_000_000;
        let plain = secure_length(&inputs(n, 0.0492, 0, 0));
        let biased = secure_length(&SecureLengthInputs { p0: Some(0.4725), ..inputs(n, 0.0492, 0, 0) });
        let shrink = (plain - biased) as f64 / n as f64;
        assert!((shrink - (1.0 - h2(0.4725))).abs() < 1e-6);
        assert!((shrink - 0.0022).abs() < 0.00005, "{shrink}");
    }

    #[test]
    fn optimal_rate_operating_point() {
        assert_eq!(optimal_rate(284, 0.0), 284);
        let r = optimal_rate(284, 0.0492);
        assert!((122..=125).contains(&r), "{r}");
    }

    proptest! {
        #[test]
        fn monotone(n in 0u64..1_000_000, q in 0.0f64..0.2, leak in 0u64..10_000, safety in 0u64..100, dq in 0.0f64..0.05, dn in 0u64..1000) {
            let base = secure_length(&inputs(n, q, leak, safety));
            prop_assert!(secure_length(&inputs(n, q + dq, leak, safety)) <= base);
            prop_assert!(secure_length(&inputs(n, q, leak + dn, safety)) <= base);
            prop_assert!(secure_length(&inputs(n, q, leak, safety + dn)) <= base);
            prop_assert!(secure_length(&inputs(n + dn, q, leak, safety)) >= base);
        }

        #[test]
        fn unbiased_p0_is_neutral(n in 0u64..1_000_000, q in 0.0f64..0.2, leak in 0u64..10_000) {
            let plain = inputs(n, q, leak, 30);
            prop_assert_eq!(secure_length(&SecureLengthInputs { p0: Some(0.5), ..plain }), secure_length(&plain));
        }
    }
}
