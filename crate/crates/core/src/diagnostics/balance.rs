use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::designs::size_bin;
use crate::error::{Error, Result};
use crate::ingest::Transaction;
use crate::stats::{mean, sample_var, stars};

/// Categories pooled across both samples below this count are left out of
/// the chi-square test.
pub const MIN_CATEGORY_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceVariable {
    pub name: String,
    pub kind: VariableKind,
}

impl BalanceVariable {
    pub fn new(name: &str, kind: VariableKind) -> Self {
        BalanceVariable {
            name: name.to_string(),
            kind,
        }
    }

    /// Home characteristics compared before and after an event.
    pub fn default_manifest() -> Vec<BalanceVariable> {
        use VariableKind::*;
        [
            ("surface_m2", Continuous),
            ("log_price", Continuous),
            ("floor", Continuous),
            ("risk", Binary),
            ("garage", Binary),
            ("annex", Binary),
            ("aircon", Binary),
            ("multi_floor", Binary),
            ("cadastral_code", Categorical),
            ("energy_class", Categorical),
            ("construction_year_bin", Categorical),
            ("size_bin", Categorical),
        ]
        .into_iter()
        .map(|(n, k)| BalanceVariable::new(n, k))
        .collect()
    }
}

enum Extracted {
    Numbers(Vec<f64>),
    Labels(Vec<String>),
}

fn extract(name: &str, rows: &[&Transaction]) -> Option<Extracted> {
    let num = |f: &dyn Fn(&Transaction) -> Option<f64>| Extracted::Numbers(rows.iter().filter_map(|t| f(t)).collect());
    let flag = |f: &dyn Fn(&Transaction) -> Option<bool>| {
        Extracted::Numbers(rows.iter().filter_map(|t| f(t).map(|b| if b { 1.0 } else { 0.0 })).collect())
    };
    let lab = |f: &dyn Fn(&Transaction) -> String| Extracted::Labels(rows.iter().map(|t| f(t)).collect());
    Some(match name {
        "surface_m2" => num(&|t| Some(t.surface_m2)),
        "log_price" => num(&|t| Some(t.log_price)),
        "price" => num(&|t| Some(t.price)),
        "monthly_income" => num(&|t| Some(t.monthly_income)),
        "floor" => num(&|t| t.floor_min.map(f64::from)),
        "awareness" => num(&|t| t.awareness_at_sale),
        "risk" => flag(&|t| t.risk_level.map(|_| t.risk_flag())),
        "garage" => flag(&|t| t.garage_flag),
        "annex" => flag(&|t| t.annex_flag),
        "aircon" => flag(&|t| t.aircon_flag),
        "multi_floor" => flag(&|t| t.multi_floor_flag),
        "young_buyer" => flag(&|t| Some(t.young_buyer_flag)),
        "cadastral_code" => lab(&|t| t.cadastral_code.label().to_string()),
        "energy_class" => lab(&|t| t.energy_class.map_or("Missing".into(), |e| e.label().to_string())),
        "construction_year_bin" => lab(&|t| t.construction_year_bin.label().to_string()),
        "size_bin" => lab(&|t| size_bin(t.surface_m2).to_string()),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    MannWhitney,
    WelchT,
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub variable: String,
    pub kind: VariableKind,
    pub test: TestKind,
    pub n_pre: usize,
    pub n_post: usize,
    pub mean_pre: Option<f64>,
    pub mean_post: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub df: Option<f64>,
    pub stars: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_categories: Vec<String>,
}

/// Two-sided Mann-Whitney U test, normal approximation with tie and
/// continuity correction.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney needs two non-empty samples"));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let diff = u - mu;
    let p = if var <= 0.0 || diff == 0.0 {
        1.0
    } else {
        let z = (diff - 0.5 * diff.signum()) / var.sqrt();
        (2.0 * Normal::standard().sf(z.abs())).min(1.0)
    };
    Ok(TestOutcome {
        statistic: u,
        p_value: p,
        df: None,
    })
}

/// Two-sided Welch two-sample t-test.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("t-test needs at least two values per sample"));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (v1, v2) = (sample_var(a) / n1, sample_var(b) / n2);
    let d = mean(a) - mean(b);
    let se2 = v1 + v2;
    if se2 == 0.0 {
        let p = if d == 0.0 { 1.0 } else { 0.0 };
        let t = if d == 0.0 { 0.0 } else { d.signum() * f64::INFINITY };
        return Ok(TestOutcome {
            statistic: t,
            p_value: p,
            df: None,
        });
    }
    let t = d / se2.sqrt();
    let df = se2 * se2 / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(TestOutcome {
        statistic: t,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
        df: Some(df),
    })
}

/// Pearson chi-square on the 2 x K table of label counts, after removing
/// categories with fewer than `min_count` pooled observations. Returns the
/// outcome and the removed categories.
pub fn chi_square(a: &[String], b: &[String], min_count: usize) -> Result<(TestOutcome, Vec<String>)> {
    let mut table: BTreeMap<&str, [f64; 2]> = BTreeMap::new();
    for l in a {
        table.entry(l).or_default()[0] += 1.0;
    }
    for l in b {
        table.entry(l).or_default()[1] += 1.0;
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = table
        .into_iter()
        .partition(|(_, c)| (c[0] + c[1]) as usize >= min_count);
    let excluded: Vec<String> = dropped.iter().map(|(l, _)| l.to_string()).collect();
    if kept.len() < 2 {
        return Err(Error::invalid(format!(
            "{} categor(ies) left after removing those under {min_count}; chi-square needs two",
            kept.len()
        )));
    }
    let row = [kept.iter().map(|(_, c)| c[0]).sum::<f64>(), kept.iter().map(|(_, c)| c[1]).sum::<f64>()];
    let total = row[0] + row[1];
    if row[0] == 0.0 || row[1] == 0.0 {
        return Err(Error::invalid("one sample is empty after category filtering"));
    }
    let mut stat = 0.0;
    for (_, c) in &kept {
        let col = c[0] + c[1];
        for s in 0..2 {
            let e = row[s] * col / total;
            stat += (c[s] - e).powi(2) / e;
        }
    }
    let df = (kept.len() - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((
        TestOutcome {
            statistic: stat,
            p_value: dist.sf(stat),
            df: Some(df),
        },
        excluded,
    ))
}

fn row_from(variable: &BalanceVariable, test: TestKind, pre: usize, post: usize, means: (Option<f64>, Option<f64>), o: TestOutcome, excluded: Vec<String>) -> BalanceRow {
    BalanceRow {
        variable: variable.name.clone(),
        kind: variable.kind,
        test,
        n_pre: pre,
        n_post: post,
        mean_pre: means.0,
        mean_post: means.1,
        statistic: o.statistic,
        p_value: o.p_value,
        df: o.df,
        stars: stars(o.p_value).to_string(),
        excluded_categories: excluded,
    }
}

/// Compare home characteristics before and after an event.
///
/// Continuous variables get Mann-Whitney and Welch t, binary variables Welch
/// t and chi-square, categorical variables chi-square. Unknown variable names
/// are skipped with a warning.
pub fn balance_tests(pre: &[&Transaction], post: &[&Transaction], manifest: &[BalanceVariable]) -> Result<Vec<BalanceRow>> {
    if pre.is_empty() || post.is_empty() {
        return Err(Error::invalid("balance tests need non-empty pre and post samples"));
    }
    let mut out = Vec::new();
    for v in manifest {
        let (Some(a), Some(b)) = (extract(&v.name, pre), extract(&v.name, post)) else {
            log::warn!("balance variable `{}` is not known; skipped", v.name);
            continue;
        };
        match (v.kind, a, b) {
            (VariableKind::Continuous | VariableKind::Binary, Extracted::Numbers(a), Extracted::Numbers(b)) => {
                let means = (
                    (!a.is_empty()).then(|| mean(&a)),
                    (!b.is_empty()).then(|| mean(&b)),
                );
                if v.kind == VariableKind::Continuous {
                    out.push(row_from(v, TestKind::MannWhitney, a.len(), b.len(), means, mann_whitney(&a, &b)?, vec![]));
                }
                out.push(row_from(v, TestKind::WelchT, a.len(), b.len(), means, welch_t(&a, &b)?, vec![]));
                if v.kind == VariableKind::Binary {
                    let la: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                    let lb: Vec<String> = b.iter().map(|x| x.to_string()).collect();
                    let (o, ex) = chi_square(&la, &lb, MIN_CATEGORY_COUNT)?;
                    out.push(row_from(v, TestKind::ChiSquare, a.len(), b.len(), means, o, ex));
                }
            }
            (VariableKind::Categorical, Extracted::Labels(a), Extracted::Labels(b)) => {
                let (o, ex) = chi_square(&a, &b, MIN_CATEGORY_COUNT)?;
                out.push(row_from(v, TestKind::ChiSquare, a.len(), b.len(), (None, None), o, ex));
            }
            _ => {
                log::warn!("balance variable `{}` does not support kind {:?}; skipped", v.name, v.kind);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_p_one() {
        let a = [1.0, 2.0, 2.0, 3.5, 4.0, 7.0];
        assert!((mann_whitney(&a, &a).unwrap().p_value - 1.0).abs() < 1e-12);
        assert!((welch_t(&a, &a).unwrap().p_value - 1.0).abs() < 1e-12);
        let l: Vec<String> = (0..60).map(|i| format!("c{}", i % 3)).collect();
        let (o, _) = chi_square(&l, &l, 20).unwrap();
        assert!((o.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_category_excluded() {
        let mut a: Vec<String> = Vec::new();
        let mut b: Vec<String> = Vec::new();
        for i in 0..40 {
            a.push("x".into());
            b.push(if i % 2 == 0 { "x".into() } else { "y".into() });
        }
        for _ in 0..10 {
            a.push("rare".into());
        }
        for _ in 0..9 {
            b.push("rare".into());
        }
        let (o, ex) = chi_square(&a, &b, 20).unwrap();
        assert_eq!(ex, vec!["rare".to_string()]);
        assert_eq!(o.df, Some(1.0));
    }

    #[test]
    fn welch_closed_form() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let o = welch_t(&a, &b).unwrap();
        // mean 2.5 var 5/3; mean 6 var 10.
        let se2 = (5.0 / 3.0) / 4.0 + 10.0 / 5.0;
        assert!((o.statistic - (-3.5 / f64::sqrt(se2))).abs() < 1e-12);
    }
}
