use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::designs::{design_for, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::solver::{Coefficient, DesignMatrix, DropReason, DroppedColumn, FitResult};
use crate::stats::stars;

pub const ORACLE_MAX_OBS: usize = 2_000;
pub const ORACLE_MAX_LEVELS: usize = 200;

/// Relative pivot size below which a dummy-expanded column counts as
/// linearly dependent.
const RANK_TOL: f64 = 1e-10;

fn ssr(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    if x.ncols() == 0 {
        return y.norm_squared();
    }
    let (cols, _) = spanning_columns(x);
    let xs = x.select_columns(&cols);
    let qr = xs.qr();
    let qty = qr.q().transpose() * y;
    y.norm_squared() - qty.norm_squared()
}

/// Indices of a maximal independent subset of columns, in input order, and
/// the numerical rank.
fn spanning_columns(x: &DMatrix<f64>) -> (Vec<usize>, usize) {
    let p = x.ncols();
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag = r.diagonal();
    let top = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let rank = diag.iter().filter(|d| d.abs() > RANK_TOL * top).count();
    let mut probe = DMatrix::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut probe);
    let mut kept: Vec<usize> = (0..rank).map(|j| probe[(0, j)] as usize).collect();
    kept.sort_unstable();
    (kept, rank)
}

/// Least squares with every fixed-effect level as an explicit dummy, and the
/// clustered sandwich summed cluster by cluster.
///
/// Regressors are listed first so that, among dependent columns, dummies are
/// the ones set aside unless a regressor lies in the span of the others.
pub fn dense_fit_design(m: &DesignMatrix) -> Result<FitResult> {
    m.validate()?;
    let n = m.n_obs();
    let levels: usize = m.fixed_effects.iter().map(|f| f.n_levels()).sum();
    if n > ORACLE_MAX_OBS || levels > ORACLE_MAX_LEVELS {
        return Err(Error::invalid(format!(
            "dense oracle limited to {ORACLE_MAX_OBS} rows and {ORACLE_MAX_LEVELS} fixed-effect levels; got {n} and {levels}"
        )));
    }
    if m.columns.is_empty() {
        return Err(Error::NoColumns);
    }
    let k = m.columns.len();
    let mut dummies = DMatrix::<f64>::zeros(n, levels);
    let mut off = 0;
    for f in &m.fixed_effects {
        for i in 0..n {
            dummies[(i, off + f.codes[i] as usize)] = 1.0;
        }
        off += f.n_levels();
    }
    let mut x = DMatrix::<f64>::zeros(n, k + levels);
    for (j, c) in m.columns.iter().enumerate() {
        x.set_column(j, &DVector::from_column_slice(c));
    }
    x.view_mut((0, k), (n, levels)).copy_from(&dummies);
    let y = DVector::from_column_slice(&m.response);

    // Regressors are tested one at a time against the dummies and the
    // regressors already kept, mirroring a sequential rank check.
    let (dummy_cols, dummy_rank) = spanning_columns(&dummies);
    let mut kept_regs: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..k {
        if m.columns[j].iter().all(|&v| v == 0.0) {
            dropped.push(DroppedColumn {
                name: m.names[j].clone(),
                reason: DropReason::AllZero,
            });
            continue;
        }
        let mut cols: Vec<usize> = kept_regs.clone();
        cols.push(j);
        cols.extend(dummy_cols.iter().map(|c| c + k));
        let (_, rank) = spanning_columns(&x.select_columns(&cols));
        if rank == kept_regs.len() + 1 + dummy_rank {
            kept_regs.push(j);
        } else {
            let reason = if rank == kept_regs.len() + dummy_rank && {
                let (_, r0) = spanning_columns(&x.select_columns(&[&[j][..], &dummy_cols.iter().map(|c| c + k).collect::<Vec<_>>()].concat()));
                r0 == dummy_rank
            } {
                DropReason::Absorbed
            } else {
                DropReason::Collinear
            };
            dropped.push(DroppedColumn {
                name: m.names[j].clone(),
                reason,
            });
        }
    }
    if kept_regs.is_empty() {
        return Err(Error::NoColumns);
    }
    let mut cols = kept_regs.clone();
    cols.extend(dummy_cols.iter().map(|c| c + k));
    let xk = x.select_columns(&cols);
    let rank = cols.len();
    let qr = xk.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::invalid("singular triangular factor"))?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(rank, rank))
        .ok_or_else(|| Error::invalid("singular triangular factor"))?;
    let bread = &rinv * rinv.transpose();
    let e = &y - &xk * &b;

    let g = m.cluster.n_levels();
    if g < 2 {
        return Err(Error::InsufficientClusters(g));
    }
    let mut meat = DMatrix::<f64>::zeros(rank, rank);
    let mut scores = vec![DVector::<f64>::zeros(rank); g];
    for i in 0..n {
        scores[m.cluster.codes[i] as usize] += xk.row(i).transpose() * e[i];
    }
    for s in &scores {
        meat += s * s.transpose();
    }
    if n <= rank {
        return Err(Error::invalid("no residual degrees of freedom"));
    }
    let (gf, nf) = (g as f64, n as f64);
    let correction = gf / (gf - 1.0) * (nf - 1.0) / (n - rank) as f64;
    let v = &bread * meat * &bread * correction;
    let nk = kept_regs.len();

    let dist = StudentsT::new(0.0, 1.0, gf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let coefficients: Vec<Coefficient> = (0..nk)
        .map(|j| {
            let se = v[(j, j)].max(0.0).sqrt();
            let t = b[j] / se;
            let p = 2.0 * dist.sf(t.abs());
            Coefficient {
                name: m.names[kept_regs[j]].clone(),
                estimate: b[j],
                se,
                t,
                p,
                stars: stars(p).to_string(),
            }
        })
        .collect();
    let vcov = (0..nk).map(|a| (0..nk).map(|c| v[(a, c)]).collect()).collect();

    let ssr_full = e.norm_squared();
    let mean = y.mean();
    let sst = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let sst_within = ssr(&dummies, &y);
    Ok(FitResult {
        response: m.response_name.clone(),
        coefficients,
        vcov,
        n_obs: n,
        n_clusters: g,
        cluster: m.cluster.name.clone(),
        fixed_effects: m.fixed_effects.iter().map(|f| f.name.clone()).collect(),
        k_absorbed: dummy_rank,
        df_residual: n - rank,
        correction,
        r_squared: 1.0 - ssr_full / sst,
        r_squared_within: 1.0 - ssr_full / sst_within,
        dropped_columns: dropped,
        converged: true,
        iterations: 0,
        residuals: e.iter().copied().collect(),
    })
}

/// Dense reference fit of a design on a small dataset.
pub fn dense_oracle_fit(spec: &ModelSpec, data: &Dataset) -> Result<FitResult> {
    if spec.risk_terms.is_empty() && spec.main_effects.is_empty() {
        return Err(Error::invalid("spec has no terms"));
    }
    let design = design_for(spec, data)?;
    dense_fit_design(&design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Factor;

    #[test]
    fn noiseless_single_regressor() {
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64).collect();
        let a: Vec<u64> = (0..n).map(|i| (i % 5) as u64).collect();
        let alpha = [0.3, -1.0, 2.0, 0.0, 5.0];
        let y: Vec<f64> = (0..n).map(|i| 1.5 * x[i] + alpha[a[i] as usize]).collect();
        let m = DesignMatrix {
            response_name: "y".into(),
            response: y,
            names: vec!["x".into()],
            columns: vec![x],
            fixed_effects: vec![Factor::from_codes("a", &a)],
            cluster: Factor::from_codes("a", &a),
        };
        let f = dense_fit_design(&m).unwrap();
        assert!((f.coefficients[0].estimate - 1.5).abs() < 1e-12);
        assert_eq!(f.k_absorbed, 5);
    }

    #[test]
    fn too_large_rejected() {
        let n = ORACLE_MAX_OBS + 1;
        let m = DesignMatrix {
            response_name: "y".into(),
            response: (0..n).map(|i| i as f64).collect(),
            names: vec!["x".into()],
            columns: vec![(0..n).map(|i| (i % 3) as f64).collect()],
            fixed_effects: vec![],
            cluster: Factor::from_codes("c", &(0..n).map(|i| (i % 4) as u64).collect::<Vec<_>>()),
        };
        assert!(dense_fit_design(&m).is_err());
    }

    #[test]
    fn absorbed_column_reported() {
        let n = 40;
        let a: Vec<u64> = (0..n).map(|i| (i % 4) as u64).collect();
        let m = DesignMatrix {
            response_name: "y".into(),
            response: (0..n).map(|i| ((i * 13) % 7) as f64).collect(),
            names: vec!["x".into(), "in_a".into()],
            columns: vec![
                (0..n).map(|i| ((i * 3) % 5) as f64).collect(),
                a.iter().map(|&c| if c == 1 { 1.0 } else { 0.0 }).collect(),
            ],
            fixed_effects: vec![Factor::from_codes("a", &a)],
            cluster: Factor::from_codes("a", &a),
        };
        let f = dense_fit_design(&m).unwrap();
        assert_eq!(f.coefficients.len(), 1);
        assert_eq!(f.dropped_columns[0].reason, DropReason::Absorbed);
    }
}
