//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use floodmem::solver::{DesignMatrix, Factor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coefficients and clustered covariance from explicit dummy expansion.
pub struct DenseFit {
    pub beta: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub rank: usize,
}

/// Dense OLS with every fixed-effect level as a dummy column, solved on a
/// spanning subset of columns, with the CR1 meat summed cluster by cluster.
pub fn dense_fit(m: &DesignMatrix) -> DenseFit {
    let n = m.n_obs();
    let k = m.columns.len();
    let n_dummies: usize = m.fixed_effects.iter().map(Factor::n_levels).sum();
    let p = k + n_dummies;
    let mut x = DMatrix::<f64>::zeros(n, p);
    for (j, c) in m.columns.iter().enumerate() {
        for i in 0..n {
            x[(i, j)] = c[i];
        }
    }
    let mut off = k;
    for f in &m.fixed_effects {
        for i in 0..n {
            x[(i, off + f.codes[i] as usize)] = 1.0;
        }
        off += f.n_levels();
    }
    let y = DVector::from_column_slice(&m.response);
    // Rank and a spanning subset of columns from a pivoted QR of the full
    // dummy matrix, then an ordinary QR solve on that subset.
    let cpqr = x.clone().col_piv_qr();
    let rdiag = cpqr.r().diagonal();
    let rmax = rdiag[0].abs();
    let rank = rdiag.iter().filter(|d| d.abs() > 1e-10 * rmax).count();
    let mut order: Vec<usize> = (0..p).collect();
    let mut probe = DMatrix::from_fn(1, p, |_, j| j as f64);
    cpqr.p().permute_columns(&mut probe);
    for j in 0..p {
        order[j] = probe[(0, j)] as usize;
    }
    let mut kept: Vec<usize> = order[..rank].to_vec();
    kept.sort_unstable();
    assert!(kept[..k].iter().copied().eq(0..k), "a regressor is collinear with the dummies");
    let xk = x.select_columns(&kept);
    let qr = xk.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let bk = r.solve_upper_triangular(&qty).unwrap();
    let rinv = r.solve_upper_triangular(&DMatrix::identity(rank, rank)).unwrap();
    let xtx_inv = &rinv * rinv.transpose();
    let e = &y - &xk * &bk;
    let x = xk;
    let p = rank;
    let xtx_pinv = xtx_inv;
    let b = bk;

    let g = m.cluster.n_levels();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for cl in 0..g {
        let mut s = DVector::<f64>::zeros(p);
        for i in 0..n {
            if m.cluster.codes[i] as usize == cl {
                s += x.row(i).transpose() * e[i];
            }
        }
        meat += &s * s.transpose();
    }
    let gf = g as f64;
    let c = gf / (gf - 1.0) * (n as f64 - 1.0) / (n - rank) as f64;
    let v = &xtx_pinv * meat * &xtx_pinv * c;
    DenseFit {
        beta: b.rows(0, k).iter().copied().collect(),
        vcov: v.view((0, 0), (k, k)).into_owned(),
        rank,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Two crossed factors, a few regressors and cluster-free noise.
pub fn random_instance(seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(200..=2000);
    let la = rng.random_range(5..=150);
    let lb = rng.random_range(3..=40);
    let g = rng.random_range(3..=20);
    let k = rng.random_range(1..=4);
    let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..la)).collect();
    let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..lb)).collect();
    let cl: Vec<u64> = (0..n).map(|_| rng.random_range(0..g)).collect();
    let fa = Factor::from_codes("a", &a);
    let fb = Factor::from_codes("b", &b);
    let cluster = Factor::from_codes("cluster", &cl);
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
        .collect();
    let ea: Vec<f64> = (0..la).map(|_| rng.random::<f64>()).collect();
    let eb: Vec<f64> = (0..lb).map(|_| rng.random::<f64>()).collect();
    let response = (0..n)
        .map(|i| {
            let xb: f64 = columns.iter().enumerate().map(|(j, c)| c[i] * (j as f64 - 1.0)).sum();
            xb + ea[a[i] as usize] + eb[b[i] as usize] + rng.random::<f64>() - 0.5
        })
        .collect();
    DesignMatrix {
        response_name: "y".into(),
        response,
        names: (0..k).map(|j| format!("x{j}")).collect(),
        columns,
        fixed_effects: vec![fa, fb],
        cluster,
    }
}

/// Even-odd ray casting against the rings of a polygon; holes count through
/// the crossing parity.
pub fn ray_cast(rings: &[Vec<[f64; 2]>], p: [f64; 2]) -> bool {
    let mut inside = false;
    for ring in rings {
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}
