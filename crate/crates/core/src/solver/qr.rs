//! Householder QR with column pivoting on column-major storage.

pub(crate) struct PivotedQr {
    /// Pivot order: `perm[j]` is the input column placed at position `j`.
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Upper-triangular `rank x rank` factor, row-major.
    pub r: Vec<Vec<f64>>,
    /// First `rank` entries of `Q' y`.
    pub qty: Vec<f64>,
}

fn norm_from(col: &[f64], start: usize) -> f64 {
    col[start..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factor `cols` (consumed as workspace) and `y`.
///
/// Stops when the largest remaining column norm falls below
/// `rank_tol * |R[0][0]|`; columns not yet pivoted in are rank deficient.
pub(crate) fn pivoted_qr(mut cols: Vec<Vec<f64>>, mut y: Vec<f64>, rank_tol: f64) -> PivotedQr {
    let k = cols.len();
    let n = y.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut diag = Vec::new();
    let mut first = 0.0;
    let mut rank = 0;
    for j in 0..k.min(n) {
        let (best, best_norm) = (j..k)
            .map(|c| (c, norm_from(&cols[c], j)))
            .fold((j, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if j == 0 {
            first = best_norm;
        }
        if best_norm == 0.0 || best_norm < rank_tol * first {
            break;
        }
        cols.swap(j, best);
        perm.swap(j, best);

        let (head, tail) = cols.split_at_mut(j + 1);
        let v = &mut head[j];
        let alpha = if v[j] >= 0.0 { -best_norm } else { best_norm };
        v[j] -= alpha;
        let vtv: f64 = v[j..].iter().map(|x| x * x).sum();
        let apply = |c: &mut Vec<f64>| {
            let s: f64 = v[j..].iter().zip(&c[j..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * s / vtv;
            for (ci, vi) in c[j..].iter_mut().zip(&v[j..]) {
                *ci -= f * vi;
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            tail.par_iter_mut().for_each(apply);
        }
        #[cfg(not(feature = "parallel"))]
        tail.iter_mut().for_each(apply);
        apply(&mut y);
        diag.push(alpha);
        rank += 1;
    }
    let r = (0..rank)
        .map(|i| {
            (0..rank)
                .map(|j| match i.cmp(&j) {
                    std::cmp::Ordering::Greater => 0.0,
                    std::cmp::Ordering::Equal => diag[i],
                    std::cmp::Ordering::Less => cols[j][i],
                })
                .collect()
        })
        .collect();
    PivotedQr {
        perm,
        rank,
        r,
        qty: y[..rank].to_vec(),
    }
}

/// Solve `R x = b` for upper-triangular `R`.
pub(crate) fn back_substitute(r: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = ((i + 1)..m).map(|j| r[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / r[i][i];
    }
    x
}

/// `R^{-1}` for upper-triangular `R`, row-major.
pub(crate) fn invert_upper(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = r.len();
    let mut inv = vec![vec![0.0; m]; m];
    for c in 0..m {
        let mut e = vec![0.0; m];
        e[c] = 1.0;
        let x = back_substitute(r, &e);
        for i in 0..m {
            inv[i][c] = x[i];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let y = vec![2.0, 4.0, 6.0, 8.0];
        let qr = pivoted_qr(x, y, 1e-10);
        assert_eq!(qr.rank, 1);
        let b = back_substitute(&qr.r, &qr.qty);
        assert!((b[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn duplicate_column_rank_one() {
        let c = vec![1.0, -1.0, 2.0, 0.5];
        let qr = pivoted_qr(vec![c.clone(), c], vec![1.0, 0.0, 0.0, 1.0], 1e-10);
        assert_eq!(qr.rank, 1);
        assert_eq!(qr.perm[0], 0);
    }
}
