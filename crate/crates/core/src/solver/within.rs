//! Projection of columns onto the orthogonal complement of the fixed-effect
//! dummies.
//!
//! The basic step subtracts group means for one factor. A symmetric sweep
//! cycles forward through the factors and back again, which gives a
//! symmetric operator `T`. The limit of repeated sweeps is the projection we
//! want; conjugate gradient on `(I - T) w = (I - T) v` reaches it in far fewer
//! sweeps than plain iteration. With a single factor one pass is exact.

use serde::{Deserialize, Serialize};

use super::factor::Factor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinReport {
    pub converged: bool,
    /// Largest iteration count over all columns.
    pub iterations: usize,
    /// Largest final update over all columns.
    pub max_change: f64,
}

pub(crate) struct Demeaner<'a> {
    factors: &'a [Factor],
    inv_counts: Vec<Vec<f64>>,
}

impl<'a> Demeaner<'a> {
    pub fn new(factors: &'a [Factor]) -> Self {
        let inv_counts = factors
            .iter()
            .map(|f| {
                f.counts()
                    .into_iter()
                    .map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                    .collect()
            })
            .collect();
        Demeaner { factors, inv_counts }
    }

    fn demean_by(&self, k: usize, v: &mut [f64], sums: &mut Vec<f64>) {
        let f = &self.factors[k];
        sums.clear();
        sums.resize(f.n_levels(), 0.0);
        for (&c, &x) in f.codes.iter().zip(v.iter()) {
            sums[c as usize] += x;
        }
        for (s, ic) in sums.iter_mut().zip(&self.inv_counts[k]) {
            *s *= ic;
        }
        for (&c, x) in f.codes.iter().zip(v.iter_mut()) {
            *x -= sums[c as usize];
        }
    }

    /// Forward then backward pass through the factors.
    fn sweep(&self, v: &mut [f64], sums: &mut Vec<f64>) {
        let k = self.factors.len();
        for i in 0..k {
            self.demean_by(i, v, sums);
        }
        for i in (0..k.saturating_sub(1)).rev() {
            self.demean_by(i, v, sums);
        }
    }

    /// `(I - T) v`.
    fn complement(&self, v: &[f64], out: &mut [f64], sums: &mut Vec<f64>) {
        out.copy_from_slice(v);
        self.sweep(out, sums);
        for (o, x) in out.iter_mut().zip(v) {
            *o = x - *o;
        }
    }

    /// Project one column in place. Returns `(converged, iterations, last change)`.
    pub fn project(&self, v: &mut [f64], tol: f64, max_iter: usize) -> (bool, usize, f64) {
        let mut sums = Vec::new();
        if self.factors.len() == 1 {
            self.demean_by(0, v, &mut sums);
            return (true, 1, 0.0);
        }
        let n = v.len();
        let scale = 1.0 + max_abs(v);
        let threshold = tol * scale;
        let mut r = vec![0.0; n];
        self.complement(v, &mut r, &mut sums);
        let mut w = vec![0.0; n];
        let mut p = r.clone();
        let mut q = vec![0.0; n];
        let mut rr = dot(&r, &r);
        // Below this residual CG only amplifies rounding error.
        let floor = (64.0 * f64::EPSILON).powi(2) * rr;
        let mut change = max_abs(&r);
        let mut iter = 0;
        let mut converged = change < threshold;
        while !converged && iter < max_iter {
            iter += 1;
            self.complement(&p, &mut q, &mut sums);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                converged = true;
                break;
            }
            let alpha = rr / pq;
            change = 0.0;
            for i in 0..n {
                let d = alpha * p[i];
                w[i] += d;
                change = f64::max(change, d.abs());
                r[i] -= alpha * q[i];
            }
            if change < threshold {
                converged = true;
                break;
            }
            let rr_new = dot(&r, &r);
            if rr_new <= floor {
                converged = true;
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        for (x, wi) in v.iter_mut().zip(&w) {
            *x -= wi;
        }
        // The result is already in the complement up to the solver tolerance;
        // one more sweep removes the residual group means cheaply.
        self.sweep(v, &mut sums);
        (converged, iter.max(1), change)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

/// Project every column on the complement of the fixed-effect dummies.
pub fn within_transform(
    factors: &[Factor],
    columns: &mut [Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> WithinReport {
    let dm = Demeaner::new(factors);
    let run = |c: &mut Vec<f64>| dm.project(c, tol, max_iter);
    #[cfg(feature = "parallel")]
    let results: Vec<(bool, usize, f64)> = {
        use rayon::prelude::*;
        columns.par_iter_mut().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(bool, usize, f64)> = columns.iter_mut().map(run).collect();
    results.into_iter().fold(
        WithinReport {
            converged: true,
            iterations: 0,
            max_change: 0.0,
        },
        |acc, (c, it, ch)| WithinReport {
            converged: acc.converged && c,
            iterations: acc.iterations.max(it),
            max_change: acc.max_change.max(ch),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_group_centers() {
        let f = Factor::from_labels("g", &["a"; 4]);
        let mut cols = vec![vec![1.0, 2.0, 3.0, 6.0]];
        let rep = within_transform(&[f], &mut cols, 1e-8, 100);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(cols[0], vec![-2.0, -1.0, 0.0, 3.0]);
    }

    #[test]
    fn constant_within_groups_vanishes() {
        let a = Factor::from_labels("a", &["0", "0", "1", "1", "2", "2"]);
        let b = Factor::from_labels("b", &["0", "1", "0", "1", "0", "1"]);
        let mut cols = vec![vec![5.0, 5.0, -1.0, -1.0, 2.0, 2.0]];
        let rep = within_transform(&[a, b], &mut cols, 1e-8, 1000);
        assert!(rep.converged);
        assert!(max_abs(&cols[0]) < 1e-12);
    }

    #[test]
    fn two_way_additive_vanishes() {
        let a = Factor::from_labels("a", &["0", "0", "1", "1", "2", "2", "0"]);
        let b = Factor::from_labels("b", &["0", "1", "0", "1", "2", "1", "2"]);
        let av = [1.0, -2.0, 0.5];
        let bv = [3.0, 0.25, -7.0];
        let col: Vec<f64> = (0..7)
            .map(|i| av[a.codes[i] as usize] + bv[b.codes[i] as usize])
            .collect();
        let mut cols = vec![col];
        within_transform(&[a, b], &mut cols, 1e-8, 1000);
        assert!(max_abs(&cols[0]) < 1e-10, "{:?}", cols[0]);
    }
}
