use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::index::SpatialIndex;
use super::layer::PolygonLayer;
use crate::error::{Error, Result};

/// Sparse row-normalized spatial weights.
///
/// Row `i` lists `(j, w_ij)` in ascending `j`. Islands have an empty row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContiguityMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl ContiguityMatrix {
    /// Row-normalize a binary adjacency given as neighbor lists.
    ///
    /// The adjacency is symmetrized and self-links are dropped.
    pub fn from_adjacency(ids: Vec<String>, neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = ids.len();
        if neighbors.len() != n {
            return Err(Error::invalid("adjacency length differs from id count"));
        }
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::invalid(format!("neighbor index {j} out of range")));
                }
                if i != j {
                    sets[i].insert(j);
                    sets[j].insert(i);
                }
            }
        }
        let rows = sets
            .into_iter()
            .map(|s| {
                let w = 1.0 / s.len() as f64;
                s.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        Ok(ContiguityMatrix { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_island(&self, i: usize) -> bool {
        self.rows[i].is_empty()
    }

    pub fn islands(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_island(i)).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, w)| w).sum()
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.rows.iter().flatten().map(|(_, w)| w).sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.rows[i][pos].1)
            .unwrap_or(0.0)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().map(|&(j, _)| j)
    }

    /// `(W z)_i`.
    pub fn lag(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * z[j]).sum())
            .collect()
    }

    /// Weights restricted to `keep` (indices into `ids`), re-normalized.
    pub fn restrict(&self, keep: &[usize]) -> ContiguityMatrix {
        let mut pos = vec![usize::MAX; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let ids = keep.iter().map(|&i| self.ids[i].clone()).collect();
        let adj: Vec<Vec<usize>> = keep
            .iter()
            .map(|&i| {
                self.neighbors(i)
                    .filter_map(|j| (pos[j] != usize::MAX).then_some(pos[j]))
                    .collect()
            })
            .collect();
        ContiguityMatrix::from_adjacency(ids, &adj).expect("indices in range")
    }

    /// `row_id,col_id,weight` triplets.
    pub fn write_triplets<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "row_id,col_id,weight")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, wt) in row {
                writeln!(w, "{},{},{}", self.ids[i], self.ids[j], wt)?;
            }
        }
        Ok(())
    }
}

/// Queen contiguity: two units are neighbors when their boundaries share
/// any point, a single vertex included.
pub fn queen_contiguity(layer: &PolygonLayer) -> Result<ContiguityMatrix> {
    if layer.len() < 2 {
        return Err(Error::invalid(format!(
            "layer `{}` has {} feature(s); contiguity needs at least two",
            layer.name,
            layer.len()
        )));
    }
    let index = SpatialIndex::build(layer)?;
    let mut adj = vec![Vec::new(); layer.len()];
    for i in 0..layer.len() {
        for j in index.candidates_in(&layer.envelope(i)) {
            if j <= i {
                continue;
            }
            if layer.features[i]
                .geometry
                .boundaries_touch(&layer.features[j].geometry)
            {
                adj[i].push(j);
            }
        }
    }
    let ids = layer.features.iter().map(|f| f.id.clone()).collect();
    let w = ContiguityMatrix::from_adjacency(ids, &adj)?;
    let islands = w.islands();
    if !islands.is_empty() {
        log::warn!(
            "{} unit(s) without neighbors in `{}`; excluded from autocorrelation statistics",
            islands.len(),
            layer.name
        );
    }
    Ok(w)
}
