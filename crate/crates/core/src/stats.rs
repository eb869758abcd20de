//! Small numeric helpers shared across modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::ingest::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tercile {
    Low,
    Medium,
    High,
}

impl Tercile {
    pub const ALL: [Tercile; 3] = [Tercile::Low, Tercile::Medium, Tercile::High];

    pub fn label(self) -> &'static str {
        match self {
            Tercile::Low => "low",
            Tercile::Medium => "medium",
            Tercile::High => "high",
        }
    }
}

/// Tercile cut points and per-value labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TercileSplit {
    pub lower: f64,
    pub upper: f64,
    pub labels: Vec<Tercile>,
}

/// Split values at their 1/3 and 2/3 sample quantiles. A value equal to a cut
/// point belongs to the lower group.
pub fn tercile_split(values: &[f64]) -> Result<TercileSplit> {
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in tercile split"));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "tercile split needs at least 3 distinct values, found {}",
            distinct.len()
        )));
    }
    let lower = quantile_sorted(&sorted, 1.0 / 3.0);
    let upper = quantile_sorted(&sorted, 2.0 / 3.0);
    let labels = values
        .iter()
        .map(|&v| {
            if v <= lower {
                Tercile::Low
            } else if v <= upper {
                Tercile::Medium
            } else {
                Tercile::High
            }
        })
        .collect();
    Ok(TercileSplit {
        lower,
        upper,
        labels,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Significance stars at the 0.01 / 0.05 / 0.1 levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_nine() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        let s = tercile_split(&v).unwrap();
        use Tercile::*;
        assert_eq!(
            s.labels,
            vec![Low, Low, Low, Medium, Medium, Medium, High, High, High]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(tercile_split(&[2.0; 10]).is_err());
        assert!(tercile_split(&[1.0, 2.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn star_tiers() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.03), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }
}
