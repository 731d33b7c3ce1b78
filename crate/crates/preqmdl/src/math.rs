//! Log-domain numeric primitives.
//!
//! Codelengths and probabilities are carried in natural-log space (nats)
//! throughout the crate. All reductions run left to right over a fixed index
//! order so results are bit-reproducible for a given seed.

use crate::error::{Error, Result};

/// Computes `log(sum_i exp(v_i))` with max-subtraction so that neither
/// overflow nor underflow occurs for inputs spanning hundreds of orders of
/// magnitude.
///
/// `-inf` entries (zero mass) are permitted; an all-`-inf` input yields
/// `-inf`. `NaN` or `+inf` entries are rejected.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    for &v in values {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFinite(format!("log_sum_exp input {v}")));
        }
    }
    Ok(lse_unchecked(values))
}

/// `log_sum_exp` over a slice already known to be non-empty and free of
/// `NaN`/`+inf`. Used in inner loops that have validated their inputs.
pub(crate) fn lse_unchecked(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton_is_identity() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
    }

    #[test]
    fn two_equal_terms_add_ln2() {
        let ln2 = std::f64::consts::LN_2;
        let got = log_sum_exp(&[ln2, ln2]).unwrap();
        assert!((got - (2.0 * ln2)).abs() < 1e-15, "got {got}");
        // far below exp underflow range; checked against 50-digit mpmath
        let got = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
        assert!((got - (-999.3068528194400547)).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyVector)));
    }

    #[test]
    fn all_neg_inf_collapses_to_neg_inf() {
        let got = log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert_eq!(got, f64::NEG_INFINITY);
    }

    #[test]
    fn neg_inf_entries_are_ignored_mass() {
        let got = log_sum_exp(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn nan_and_pos_inf_are_rejected() {
        assert!(log_sum_exp(&[0.0, f64::NAN]).is_err());
        assert!(log_sum_exp(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn no_overflow_at_large_magnitudes() {
        let got = log_sum_exp(&[700.0, 700.0]).unwrap();
        assert!((got - (700.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        let got = log_sum_exp(&[-1e300, 0.0]).unwrap();
        assert_eq!(got, 0.0);
    }

    proptest! {
        #[test]
        fn shift_identity(v in prop::collection::vec(-500.0f64..500.0, 1..20), c in -200.0f64..200.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = log_sum_exp(&v).unwrap() + c;
            let b = log_sum_exp(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn permutation_invariant(v in prop::collection::vec(-500.0f64..500.0, 1..20)) {
            let mut rev = v.clone();
            rev.reverse();
            let a = log_sum_exp(&v).unwrap();
            let b = log_sum_exp(&rev).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn bracketed_by_max_and_max_plus_ln_n(v in prop::collection::vec(-500.0f64..500.0, 1..20)) {
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let got = log_sum_exp(&v).unwrap();
            prop_assert!(got >= max - 1e-12);
            prop_assert!(got <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
