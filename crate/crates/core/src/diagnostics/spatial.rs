use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geo::ContiguityMatrix;

pub const DEFAULT_PERMUTATIONS: usize = 999;

/// Mean residual per spatial unit; units without observations are absent.
pub fn aggregate_residuals_by_unit<S: AsRef<str>>(residuals: &[f64], units: &[S]) -> Result<BTreeMap<String, f64>> {
    if residuals.len() != units.len() {
        return Err(Error::invalid(format!(
            "{} residuals but {} unit assignments",
            residuals.len(),
            units.len()
        )));
    }
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (r, u) in residuals.iter().zip(units) {
        let e = acc.entry(u.as_ref()).or_insert((0.0, 0));
        e.0 += r;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(u, (s, n))| (u.to_string(), s / n as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MoranMethod {
    NormalApprox,
    Permutation { n_perm: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    #[serde(rename = "I")]
    pub i: f64,
    pub expected_i: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub method: MoranMethod,
    pub n_units: usize,
    /// Units dropped for lacking a value or any neighbor.
    pub excluded: Vec<String>,
}

/// Values aligned with a weights matrix, after dropping units without a value
/// and units left without neighbors.
struct Aligned {
    w: ContiguityMatrix,
    z: Vec<f64>,
    excluded: Vec<String>,
}

fn align(values: &BTreeMap<String, f64>, w: &ContiguityMatrix) -> Result<Aligned> {
    let mut keep: Vec<usize> = (0..w.len()).filter(|&i| values.contains_key(&w.ids[i])).collect();
    let mut excluded: Vec<String> = (0..w.len())
        .filter(|&i| !values.contains_key(&w.ids[i]))
        .map(|i| w.ids[i].clone())
        .collect();
    let mut sub = w.restrict(&keep);
    // Dropping islands can isolate further units; repeat until stable.
    loop {
        let islands = sub.islands();
        if islands.is_empty() {
            break;
        }
        excluded.extend(islands.iter().map(|&i| sub.ids[i].clone()));
        let inner: Vec<usize> = (0..sub.len()).filter(|i| !islands.contains(i)).collect();
        keep = inner.iter().map(|&i| keep[i]).collect();
        sub = w.restrict(&keep);
    }
    if !excluded.is_empty() {
        log::warn!("{} unit(s) without value or neighbors excluded", excluded.len());
    }
    excluded.sort();
    if sub.is_empty() {
        return Err(Error::invalid("no unit has both a value and a neighbor"));
    }
    if sub.len() < 3 {
        return Err(Error::invalid(format!("{} usable unit(s); at least 3 needed", sub.len())));
    }
    let x: Vec<f64> = sub.ids.iter().map(|id| values[id]).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if zz.sqrt() <= 1e-12 * scale * (x.len() as f64).sqrt() {
        return Err(Error::ConstantField);
    }
    Ok(Aligned { w: sub, z, excluded })
}

fn moran_stat(w: &ContiguityMatrix, z: &[f64]) -> f64 {
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let lag = w.lag(z);
    let zwz: f64 = z.iter().zip(&lag).map(|(a, b)| a * b).sum();
    z.len() as f64 / w.s0() * zwz / zz
}

/// Shuffled copy of `z` for permutation `k`, from its own substream.
fn permuted(z: &[f64], seed: u64, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut p = z.to_vec();
    p.shuffle(&mut rng);
    p
}

/// Pseudo p-value folded towards the tail the observed value lies in.
fn folded_p(observed: f64, sims: &[f64]) -> f64 {
    let n = sims.len();
    let mut larger = sims.iter().filter(|&&s| s >= observed).count();
    if n - larger < larger {
        larger = n - larger;
    }
    (larger as f64 + 1.0) / (n as f64 + 1.0)
}

pub fn global_morans_i(values: &BTreeMap<String, f64>, w: &ContiguityMatrix, method: MoranMethod) -> Result<MoranResult> {
    let a = align(values, w)?;
    let n = a.z.len();
    let nf = n as f64;
    let i = moran_stat(&a.w, &a.z);
    let expected_i = -1.0 / (nf - 1.0);
    let (z_score, p_value) = match method {
        MoranMethod::NormalApprox => {
            if n < 4 {
                return Err(Error::invalid("normal approximation needs at least 4 units"));
            }
            let s0 = a.w.s0();
            let mut s1 = 0.0;
            let mut col_sums = vec![0.0; n];
            for (r, row) in a.w.rows.iter().enumerate() {
                for &(c, wt) in row {
                    let wji = a.w.weight(c, r);
                    s1 += (wt + wji).powi(2);
                    col_sums[c] += wt;
                }
            }
            s1 *= 0.5;
            let s2: f64 = (0..n).map(|r| (a.w.row_sum(r) + col_sums[r]).powi(2)).sum();
            let z2: f64 = a.z.iter().map(|v| v * v).sum();
            let z4: f64 = a.z.iter().map(|v| v.powi(4)).sum();
            let b2 = nf * z4 / (z2 * z2);
            let num = nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
                - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0);
            let var = num / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0) - expected_i * expected_i;
            let z = (i - expected_i) / var.sqrt();
            let p = 2.0 * Normal::standard().sf(z.abs());
            (z, p.min(1.0))
        }
        MoranMethod::Permutation { n_perm, seed } => {
            if n_perm == 0 {
                return Err(Error::invalid("permutation count must be positive"));
            }
            let run = |k: usize| moran_stat(&a.w, &permuted(&a.z, seed, k));
            #[cfg(feature = "parallel")]
            let sims: Vec<f64> = {
                use rayon::prelude::*;
                (0..n_perm).into_par_iter().map(run).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let sims: Vec<f64> = (0..n_perm).map(run).collect();
            let mean = sims.iter().sum::<f64>() / n_perm as f64;
            let sd = (sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n_perm as f64 - 1.0).max(1.0)).sqrt();
            ((i - mean) / sd, folded_p(i, &sims))
        }
    };
    Ok(MoranResult {
        i,
        expected_i,
        z_score,
        p_value,
        method,
        n_units: n,
        excluded: a.excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LisaClass {
    HighHigh,
    HighLow,
    LowHigh,
    LowLow,
    NotSignificant,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaUnit {
    pub id: String,
    pub local_i: Option<f64>,
    pub p_value: Option<f64>,
    pub class: LisaClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaResult {
    pub units: Vec<LisaUnit>,
    pub alpha: f64,
    pub n_perm: usize,
    pub seed: u64,
}

impl LisaResult {
    pub fn class_of(&self, id: &str) -> Option<LisaClass> {
        self.units.iter().find(|u| u.id == id).map(|u| u.class)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "unit_id,local_i,p_value,class")?;
        for u in &self.units {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{:?}", u.id, f(u.local_i), f(u.p_value), u.class)?;
        }
        Ok(())
    }
}

/// Local Moran statistics with conditional permutation p-values. Every unit
/// of `w` appears in the output, in `w` order.
pub fn lisa(values: &BTreeMap<String, f64>, w: &ContiguityMatrix, n_perm: usize, alpha: f64, seed: u64) -> Result<LisaResult> {
    if n_perm == 0 {
        return Err(Error::invalid("permutation count must be positive"));
    }
    let a = align(values, w)?;
    let n = a.z.len();
    let zz: f64 = a.z.iter().map(|v| v * v).sum();
    let scale = n as f64 / zz;
    let lag = a.w.lag(&a.z);
    let unit = |i: usize| -> (f64, f64) {
        let local = a.z[i] * lag[i] * scale;
        let row = &a.w.rows[i];
        let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| a.z[j]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let sims: Vec<f64> = (0..n_perm)
            .map(|_| {
                let pick = rand::seq::index::sample(&mut rng, others.len(), row.len());
                let l: f64 = row.iter().zip(pick.iter()).map(|(&(_, wt), k)| wt * others[k]).sum();
                a.z[i] * l * scale
            })
            .collect();
        (local, folded_p(local, &sims))
    };
    #[cfg(feature = "parallel")]
    let stats: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(unit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<(f64, f64)> = (0..n).map(unit).collect();

    let mut by_id: BTreeMap<&str, LisaUnit> = BTreeMap::new();
    for (i, (local, p)) in stats.into_iter().enumerate() {
        let class = if p >= alpha {
            LisaClass::NotSignificant
        } else {
            match (a.z[i] > 0.0, lag[i] > 0.0) {
                (true, true) => LisaClass::HighHigh,
                (true, false) => LisaClass::HighLow,
                (false, true) => LisaClass::LowHigh,
                (false, false) => LisaClass::LowLow,
            }
        };
        by_id.insert(
            &a.w.ids[i],
            LisaUnit {
                id: a.w.ids[i].clone(),
                local_i: Some(local),
                p_value: Some(p),
                class,
            },
        );
    }
    let units = w
        .ids
        .iter()
        .map(|id| {
            by_id.remove(id.as_str()).unwrap_or(LisaUnit {
                id: id.clone(),
                local_i: None,
                p_value: None,
                class: LisaClass::Missing,
            })
        })
        .collect();
    Ok(LisaResult {
        units,
        alpha,
        n_perm,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rook_grid(nx: usize, ny: usize) -> ContiguityMatrix {
        let id = |x: usize, y: usize| y * nx + x;
        let mut adj = vec![Vec::new(); nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                if x + 1 < nx {
                    adj[id(x, y)].push(id(x + 1, y));
                }
                if y + 1 < ny {
                    adj[id(x, y)].push(id(x, y + 1));
                }
            }
        }
        let ids = (0..nx * ny).map(|i| format!("u{i:03}")).collect();
        ContiguityMatrix::from_adjacency(ids, &adj).unwrap()
    }

    fn values(w: &ContiguityMatrix, f: impl Fn(usize) -> f64) -> BTreeMap<String, f64> {
        w.ids.iter().enumerate().map(|(i, id)| (id.clone(), f(i))).collect()
    }

    #[test]
    fn aggregation() {
        let m = aggregate_residuals_by_unit(&[0.1, -0.1, 0.5], &["a", "a", "b"]).unwrap();
        assert_eq!(m["a"], 0.0);
        assert_eq!(m["b"], 0.5);
    }

    #[test]
    fn checkerboard_is_minus_one() {
        let w = rook_grid(2, 2);
        let v = values(&w, |i| if (i % 2) ^ (i / 2) == 0 { 1.0 } else { -1.0 });
        let r = global_morans_i(&v, &w, MoranMethod::NormalApprox).unwrap();
        assert!((r.i + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_field_errors() {
        let w = rook_grid(3, 3);
        let v = values(&w, |_| 2.5);
        assert!(matches!(global_morans_i(&v, &w, MoranMethod::NormalApprox), Err(Error::ConstantField)));
    }

    #[test]
    fn local_mean_equals_global() {
        let w = rook_grid(6, 5);
        let v = values(&w, |i| ((i * 7919) % 31) as f64 + (i % 6) as f64);
        let g = global_morans_i(&v, &w, MoranMethod::NormalApprox).unwrap();
        let l = lisa(&v, &w, 99, 0.05, 1).unwrap();
        let mean = l.units.iter().map(|u| u.local_i.unwrap()).sum::<f64>() / l.units.len() as f64;
        assert!((mean - g.i).abs() < 1e-10);
    }

    #[test]
    fn isolated_unit_missing() {
        let mut w = rook_grid(3, 3);
        w.ids.push("far".into());
        w.rows.push(Vec::new());
        let v = values(&w, |i| i as f64);
        let l = lisa(&v, &w, 99, 0.05, 3).unwrap();
        assert_eq!(l.class_of("far"), Some(LisaClass::Missing));
        let g = global_morans_i(&v, &w, MoranMethod::NormalApprox).unwrap();
        assert_eq!(g.excluded, vec!["far".to_string()]);
    }

    #[test]
    fn permutation_reproducible() {
        let w = rook_grid(5, 5);
        let v = values(&w, |i| ((i * 13) % 7) as f64);
        let m = MoranMethod::Permutation { n_perm: 199, seed: 42 };
        assert_eq!(global_morans_i(&v, &w, m).unwrap(), global_morans_i(&v, &w, m).unwrap());
    }
}
