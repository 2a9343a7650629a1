use serde::{Deserialize, Serialize};

use super::EvalError;

/// Terms with `|y|` below this are left out of MAPE.
pub const MAPE_ZERO_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub n: usize,
    /// Points skipped by the MAPE zero guard.
    pub mape_excluded: usize,
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<MetricReport, EvalError> {
    if y.len() != yhat.len() {
        return Err(EvalError::LengthMismatch {
            truth: y.len(),
            predicted: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = y.len() as f64;
    let (mut abs, mut sq, mut pct, mut kept) = (0.0, 0.0, 0.0, 0usize);
    for (a, b) in y.iter().zip(yhat) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
        if a.abs() >= MAPE_ZERO_GUARD {
            pct += (e / a).abs();
            kept += 1;
        }
    }
    Ok(MetricReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: if kept > 0 { 100.0 * pct / kept as f64 } else { 0.0 },
        n: y.len(),
        mape_excluded: y.len() - kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let r = metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.mae, r.rmse, r.mape), (0.0, 0.0, 0.0));
        let r = metrics(&[100.0], &[90.0]).unwrap();
        assert!((r.mae - 10.0).abs() < 1e-12 && (r.rmse - 10.0).abs() < 1e-12 && (r.mape - 10.0).abs() < 1e-12);
        let r = metrics(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!((r.mae - 1.5).abs() < 1e-12);
        assert!((r.rmse - 1.5811).abs() < 1e-4);
        assert!((r.mape - 100.0).abs() < 1e-12);
    }

    #[test]
    fn errors_and_zero_guard() {
        assert_eq!(metrics(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { truth: 1, predicted: 2 }));
        assert_eq!(metrics(&[], &[]), Err(EvalError::EmptyInput));
        let r = metrics(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(r.mape_excluded, 1);
        assert!((r.mape - 50.0).abs() < 1e-12);
        assert_eq!(r.mae, 1.0);
    }

    proptest! {
        #[test]
        fn identities(y in prop::collection::vec(1.0f64..40.0, 1..50), c in -5.0f64..5.0, k in 0.1f64..10.0,
                      noise in prop::collection::vec(-3.0f64..3.0, 50)) {
            let yhat: Vec<f64> = y.iter().zip(&noise).map(|(a, e)| a + e).collect();
            let r = metrics(&y, &yhat).unwrap();
            prop_assert!(r.rmse >= r.mae - 1e-12 && r.mae >= 0.0 && r.mape >= 0.0);
            let shifted: Vec<f64> = y.iter().map(|a| a + c).collect();
            let s = metrics(&y, &shifted).unwrap();
            prop_assert!((s.mae - c.abs()).abs() < 1e-9 && (s.rmse - c.abs()).abs() < 1e-9);
            let ky: Vec<f64> = y.iter().map(|a| k * a).collect();
            let kh: Vec<f64> = yhat.iter().map(|a| k * a).collect();
            let ks = metrics(&ky, &kh).unwrap();
            prop_assert!((ks.mae - k * r.mae).abs() < 1e-9 * (1.0 + r.mae * k));
            prop_assert!((ks.rmse - k * r.rmse).abs() < 1e-9 * (1.0 + r.rmse * k));
            prop_assert!((ks.mape - r.mape).abs() < 1e-9 * (1.0 + r.mape));
        }
    }
}
