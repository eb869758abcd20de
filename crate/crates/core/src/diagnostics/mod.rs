//! Residual spatial autocorrelation, pre/post balance and representativity.

mod balance;
mod spatial;

use serde::{Deserialize, Serialize};

pub use balance::{
    balance_tests, chi_square, mann_whitney, welch_t, BalanceRow, BalanceVariable, TestKind, TestOutcome,
    VariableKind, MIN_CATEGORY_COUNT,
};
pub use spatial::{
    aggregate_residuals_by_unit, global_morans_i, lisa, LisaClass, LisaResult, LisaUnit, MoranMethod, MoranResult,
    DEFAULT_PERMUTATIONS,
};

use crate::error::{Error, Result};

/// Share of the total in each bin.
pub fn share_by_bin(counts: &[f64]) -> Result<Vec<f64>> {
    if counts.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("counts sum to zero"));
    }
    Ok(counts.iter().map(|c| c / total).collect())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length series of at least two values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantField);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Everything the `diagnose` step reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub moran_normal: MoranResult,
    pub moran_permutation: MoranResult,
    pub lisa: LisaResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub balance: Vec<BalanceRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares() {
        assert_eq!(share_by_bin(&[10.0, 30.0, 60.0]).unwrap(), vec![0.1, 0.3, 0.6]);
        assert_eq!(share_by_bin(&[4.0]).unwrap(), vec![1.0]);
        assert!(share_by_bin(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn pearson_signs() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }
}
