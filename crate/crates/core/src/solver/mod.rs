//! Least squares with absorbed fixed effects and cluster-robust covariance.

mod factor;
mod qr;
mod within;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use factor::{absorbed_dof, connected_components, Factor};
pub use within::{within_transform, WithinReport};

use crate::error::{Error, Result};
use crate::stats::stars;

/// Response, named regressors, fixed-effect factors and the cluster factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub response_name: String,
    pub response: Vec<f64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub fixed_effects: Vec<Factor>,
    pub cluster: Factor,
}

impl DesignMatrix {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.response.len();
        if n == 0 {
            return Err(Error::invalid("empty design"));
        }
        if self.names.len() != self.columns.len() {
            return Err(Error::invalid("column names and columns differ in count"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.names {
            if !seen.insert(name) {
                return Err(Error::invalid(format!("duplicate column `{name}`")));
            }
        }
        if self.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in `{}`", self.response_name)));
        }
        for (name, c) in self.names.iter().zip(&self.columns) {
            if c.len() != n {
                return Err(Error::invalid(format!("column `{name}` has {} rows, expected {n}", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in `{name}`")));
            }
        }
        for f in self.fixed_effects.iter().chain(std::iter::once(&self.cluster)) {
            if f.len() != n {
                return Err(Error::invalid(format!("factor `{}` has {} rows, expected {n}", f.name, f.len())));
            }
            f.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative pivot threshold on unit-norm columns.
    pub rank_tol: f64,
    /// A column whose demeaned norm is below this fraction of its raw norm
    /// is treated as absorbed by the fixed effects.
    pub absorb_tol: f64,
    /// Estimate even when demeaning did not converge.
    pub force: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 10_000,
            rank_tol: 1e-7,
            absorb_tol: 1e-6,
            force: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    AllZero,
    Absorbed,
    Collinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

/// Least-squares solution on (already demeaned) columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Indices of kept columns in input order.
    pub kept: Vec<usize>,
    pub beta: Vec<f64>,
    /// `(X'X)^{-1}` over kept columns.
    pub bread: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub dropped: Vec<(usize, DropReason)>,
}

/// Rank-revealing least squares. Columns are scaled to unit norm before a
/// pivoted QR, so `rank_tol` bounds the sine of the angle between a dropped
/// column and the span of the kept ones.
pub fn ols(columns: &[Vec<f64>], y: &[f64], rank_tol: f64) -> Result<OlsFit> {
    let mut dropped = Vec::new();
    let mut cand = Vec::new();
    let mut scale = Vec::new();
    for (j, c) in columns.iter().enumerate() {
        let s = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s == 0.0 {
            dropped.push((j, DropReason::AllZero));
        } else {
            cand.push(j);
            scale.push(s);
        }
    }
    if cand.is_empty() {
        return Err(Error::NoColumns);
    }
    let work: Vec<Vec<f64>> = cand
        .iter()
        .zip(&scale)
        .map(|(&j, s)| columns[j].iter().map(|x| x / s).collect())
        .collect();
    let qr = qr::pivoted_qr(work, y.to_vec(), rank_tol);
    if qr.rank == 0 {
        return Err(Error::NoColumns);
    }
    for &p in &qr.perm[qr.rank..] {
        dropped.push((cand[p], DropReason::Collinear));
    }
    dropped.sort_by_key(|d| d.0);

    // Kept columns in input order, and their position in pivot order.
    let mut order: Vec<(usize, usize)> = qr.perm[..qr.rank]
        .iter()
        .enumerate()
        .map(|(pos, &p)| (p, pos))
        .collect();
    order.sort_unstable();
    let bz = qr::back_substitute(&qr.r, &qr.qty);
    let rinv = qr::invert_upper(&qr.r);
    let m = qr.rank;
    let bread_z = |a: usize, b: usize| -> f64 {
        (a.max(b)..m).map(|l| rinv[a][l] * rinv[b][l]).sum()
    };
    let kept: Vec<usize> = order.iter().map(|&(p, _)| cand[p]).collect();
    let beta: Vec<f64> = order.iter().map(|&(p, pos)| bz[pos] / scale[p]).collect();
    let bread = order
        .iter()
        .map(|&(p, a)| {
            order
                .iter()
                .map(|&(q, b)| bread_z(a, b) / (scale[p] * scale[q]))
                .collect()
        })
        .collect();
    let mut residuals = y.to_vec();
    for (&j, &b) in kept.iter().zip(&beta) {
        for (e, x) in residuals.iter_mut().zip(&columns[j]) {
            *e -= b * x;
        }
    }
    Ok(OlsFit {
        kept,
        beta,
        bread,
        residuals,
        dropped,
    })
}

/// Cluster-robust covariance with its small-sample factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVcov {
    pub matrix: Vec<Vec<f64>>,
    pub n_clusters: usize,
    /// `G/(G-1) * (N-1)/(N-K)`.
    pub correction: f64,
}

fn scores(columns: &[&[f64]], residuals: &[f64], cluster: &Factor) -> DMatrix<f64> {
    let g = cluster.n_levels();
    let mut s = DMatrix::<f64>::zeros(g, columns.len());
    for (j, c) in columns.iter().enumerate() {
        let mut col = s.column_mut(j);
        for ((&k, &x), &e) in cluster.codes.iter().zip(c.iter()).zip(residuals) {
            col[k as usize] += x * e;
        }
    }
    s
}

fn sandwich(
    columns: &[&[f64]],
    residuals: &[f64],
    cluster: &Factor,
    bread: &DMatrix<f64>,
    k_total: usize,
) -> Result<ClusterVcov> {
    let n = residuals.len();
    let g = cluster.counts().iter().filter(|&&c| c > 0).count();
    if g < 2 {
        return Err(Error::InsufficientClusters(g));
    }
    if n <= k_total {
        return Err(Error::invalid(format!(
            "{n} observations cannot support {k_total} parameters"
        )));
    }
    let s = scores(columns, residuals, cluster);
    let meat = s.transpose() * &s;
    let gf = g as f64;
    let correction = gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k_total) as f64;
    let v = bread * meat * bread * correction;
    let k = v.nrows();
    let matrix = (0..k)
        .map(|i| (0..k).map(|j| 0.5 * (v[(i, j)] + v[(j, i)])).collect())
        .collect();
    Ok(ClusterVcov {
        matrix,
        n_clusters: g,
        correction,
    })
}

/// CR1 sandwich `B (sum_g X_g' e_g e_g' X_g) B` with `B = (X'X)^{-1}`.
///
/// `k_absorbed` counts fixed-effect degrees of freedom; the regressor count
/// is added to it for the small-sample factor.
pub fn cluster_robust_vcov(
    columns: &[Vec<f64>],
    residuals: &[f64],
    cluster: &Factor,
    k_absorbed: usize,
) -> Result<ClusterVcov> {
    let k = columns.len();
    let xtx = DMatrix::from_fn(k, k, |i, j| {
        columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum()
    });
    let bread = xtx
        .cholesky()
        .ok_or_else(|| Error::invalid("regressors are collinear"))?
        .inverse();
    let cols: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    sandwich(&cols, residuals, cluster, &bread, k + k_absorbed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub response: String,
    pub coefficients: Vec<Coefficient>,
    /// Covariance over `coefficients`, in the same order.
    pub vcov: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub cluster: String,
    pub fixed_effects: Vec<String>,
    pub k_absorbed: usize,
    pub df_residual: usize,
    /// Small-sample factor applied to the sandwich.
    pub correction: f64,
    /// `1 - SSR/SST` on the raw response.
    pub r_squared: f64,
    /// `1 - SSR/SST` on the demeaned response.
    pub r_squared_within: f64,
    pub dropped_columns: Vec<DroppedColumn>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.se).collect()
    }

    pub fn is_dropped(&self, name: &str) -> bool {
        self.dropped_columns.iter().any(|d| d.name == name)
    }

    /// Two-sided interval for `c` at `level`, on the t distribution with
    /// clusters minus one degrees of freedom.
    pub fn interval(&self, c: &Coefficient, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
        }
        let t = StudentsT::new(0.0, 1.0, self.n_clusters.saturating_sub(1) as f64)
            .map_err(|e| Error::invalid(e.to_string()))?
            .inverse_cdf(0.5 + level / 2.0);
        Ok((c.estimate - t * c.se, c.estimate + t * c.se))
    }
}

/// Demean, solve and compute clustered standard errors.
pub fn estimate(m: &DesignMatrix, opts: &SolverOptions) -> Result<FitResult> {
    m.validate().map_err(|e| e.at("design"))?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive").at("within_transform"));
    }
    let n = m.n_obs();
    let raw_norms: Vec<f64> = m
        .columns
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let mut work: Vec<Vec<f64>> = Vec::with_capacity(m.columns.len() + 1);
    work.push(m.response.clone());
    work.extend(m.columns.iter().cloned());
    let report = if m.fixed_effects.is_empty() {
        WithinReport {
            converged: true,
            iterations: 0,
            max_change: 0.0,
        }
    } else {
        within_transform(&m.fixed_effects, &mut work, opts.tol, opts.max_iter)
    };
    if !report.converged && !opts.force {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            max_change: report.max_change,
        }
        .at("within_transform"));
    }
    let y = work.remove(0);
    let mut dropped: Vec<(usize, DropReason)> = Vec::new();
    let mut cand = Vec::new();
    for (j, c) in work.iter().enumerate() {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if raw_norms[j] == 0.0 {
            dropped.push((j, DropReason::AllZero));
        } else if norm <= opts.absorb_tol * raw_norms[j] {
            dropped.push((j, DropReason::Absorbed));
        } else {
            cand.push(j);
        }
    }
    if cand.is_empty() {
        return Err(Error::NoColumns.at("ols"));
    }
    let cand_cols: Vec<Vec<f64>> = cand.iter().map(|&j| std::mem::take(&mut work[j])).collect();
    let fit = ols(&cand_cols, &y, opts.rank_tol).map_err(|e| e.at("ols"))?;
    dropped.extend(fit.dropped.iter().map(|&(i, r)| (cand[i], r)));
    dropped.sort_by_key(|d| d.0);

    let k_absorbed = absorbed_dof(&m.fixed_effects);
    let k = fit.kept.len();
    let kept_cols: Vec<&[f64]> = fit.kept.iter().map(|&i| cand_cols[i].as_slice()).collect();
    let bread = DMatrix::from_fn(k, k, |i, j| fit.bread[i][j]);
    let vc = sandwich(&kept_cols, &fit.residuals, &m.cluster, &bread, k + k_absorbed)
        .map_err(|e| e.at("cluster_robust_vcov"))?;

    let ssr: f64 = fit.residuals.iter().map(|e| e * e).sum();
    let sst = centered_ss(&m.response);
    let sst_within = centered_ss(&y);
    let df_t = (vc.n_clusters - 1) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df_t).map_err(|e| Error::invalid(e.to_string()))?;
    let coefficients = fit
        .kept
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let j = cand[c];
            let estimate = fit.beta[i];
            let se = vc.matrix[i][i].max(0.0).sqrt();
            let t = estimate / se;
            let p = if t.is_finite() { 2.0 * tdist.sf(t.abs()) } else { f64::NAN };
            Coefficient {
                name: m.names[j].clone(),
                estimate,
                se,
                t,
                p,
                stars: stars(p).to_string(),
            }
        })
        .collect();
    Ok(FitResult {
        response: m.response_name.clone(),
        coefficients,
        vcov: vc.matrix,
        n_obs: n,
        n_clusters: vc.n_clusters,
        cluster: m.cluster.name.clone(),
        fixed_effects: m.fixed_effects.iter().map(|f| f.name.clone()).collect(),
        k_absorbed,
        df_residual: n - k - k_absorbed,
        correction: vc.correction,
        r_squared: 1.0 - ssr / sst,
        r_squared_within: 1.0 - ssr / sst_within,
        dropped_columns: dropped
            .into_iter()
            .map(|(j, reason)| DroppedColumn {
                name: m.names[j].clone(),
                reason,
            })
            .collect(),
        converged: report.converged,
        iterations: report.iterations,
        residuals: fit.residuals,
    })
}

fn centered_ss(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DesignMatrix {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let fe = Factor::from_labels("g", &["a", "a", "a", "b", "b", "b", "c", "c", "c", "d", "d", "d"]);
        let y: Vec<f64> = x
            .iter()
            .zip(&fe.codes)
            .enumerate()
            .map(|(i, (x, &g))| 2.0 * x + g as f64 + 0.01 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        DesignMatrix {
            response_name: "y".into(),
            response: y,
            names: vec!["x".into()],
            columns: vec![x],
            cluster: fe.clone(),
            fixed_effects: vec![fe],
        }
    }

    #[test]
    fn exact_line() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let fit = ols(&[x.clone()], &[2.0, 4.0, 6.0, 8.0], 1e-7).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-14);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-14));
    }

    #[test]
    fn duplicate_column_dropped() {
        let x = vec![1.0, -2.0, 3.0, 0.5];
        let fit = ols(&[x.clone(), x], &[1.0, 2.0, 0.0, 1.0], 1e-7).unwrap();
        assert_eq!(fit.kept, vec![0]);
        assert_eq!(fit.dropped, vec![(1, DropReason::Collinear)]);
    }

    #[test]
    fn no_columns_is_error() {
        assert!(matches!(ols(&[vec![0.0; 3]], &[1.0, 2.0, 3.0], 1e-7), Err(Error::NoColumns)));
    }

    #[test]
    fn single_cluster_is_error() {
        let c = Factor::from_labels("c", &["a"; 4]);
        let r = cluster_robust_vcov(&[vec![1.0, 2.0, 3.0, 4.0]], &[0.1, -0.1, 0.2, 0.0], &c, 0);
        assert!(matches!(r, Err(Error::InsufficientClusters(1))));
    }

    #[test]
    fn singleton_clusters_match_hc1() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![1.0, 0.0, 1.0, 0.0, 2.0]];
        let e = [0.3, -0.2, 0.1, -0.4, 0.2];
        let c = Factor::from_labels("c", &["1", "2", "3", "4", "5"]);
        let v = cluster_robust_vcov(&x, &e, &c, 0).unwrap();
        // HC1 written out directly.
        let xm = DMatrix::from_fn(5, 2, |i, j| x[j][i]);
        let b = (xm.transpose() * &xm).try_inverse().unwrap();
        let mut meat = DMatrix::<f64>::zeros(2, 2);
        for i in 0..5 {
            let r = xm.row(i).transpose();
            meat += &r * r.transpose() * (e[i] * e[i]);
        }
        let hc1 = &b * meat * &b * (5.0 / 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((v.matrix[i][j] - hc1[(i, j)]).abs() < 1e-12 * hc1[(i, j)].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn estimate_recovers_slope() {
        let fit = estimate(&toy(), &SolverOptions::default()).unwrap();
        let b = fit.coefficient("x").unwrap();
        assert!((b.estimate - 2.0).abs() < 0.05);
        assert_eq!(fit.k_absorbed, 4);
        assert_eq!(fit.n_clusters, 4);
        assert!(fit.r_squared > fit.r_squared_within - 1e-12);
    }

    #[test]
    fn absorbed_and_zero_columns_reported() {
        let mut m = toy();
        let g = m.fixed_effects[0].codes.iter().map(|&c| c as f64).collect();
        m.names.push("group_const".into());
        m.columns.push(g);
        m.names.push("zero".into());
        m.columns.push(vec![0.0; 12]);
        let fit = estimate(&m, &SolverOptions::default()).unwrap();
        assert_eq!(fit.coefficients.len(), 1);
        assert_eq!(
            fit.dropped_columns,
            vec![
                DroppedColumn { name: "group_const".into(), reason: DropReason::Absorbed },
                DroppedColumn { name: "zero".into(), reason: DropReason::AllZero },
            ]
        );
    }

    #[test]
    fn stage_named_on_failure() {
        let mut m = toy();
        m.cluster = Factor::from_labels("one", &["a"; 12]);
        let err = estimate(&m, &SolverOptions::default()).unwrap_err();
        assert_eq!(err.stage(), Some("cluster_robust_vcov"));
    }
}
