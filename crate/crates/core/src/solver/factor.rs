use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A categorical column with dense integer codes `0..levels.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub codes: Vec<u32>,
    pub levels: Vec<String>,
}

impl Factor {
    /// Levels are sorted lexicographically so the coding does not depend on
    /// row order.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut map: BTreeMap<&str, u32> = BTreeMap::new();
        for l in labels {
            map.entry(l.as_ref()).or_insert(0);
        }
        for (i, v) in map.values_mut().enumerate() {
            *v = i as u32;
        }
        let codes = labels.iter().map(|l| map[l.as_ref()]).collect();
        let levels = map.keys().map(|s| s.to_string()).collect();
        Factor {
            name: name.into(),
            codes,
            levels,
        }
    }

    /// Densify arbitrary integer codes, keeping their numeric order.
    pub fn from_codes(name: impl Into<String>, raw: &[u64]) -> Self {
        let mut uniq: Vec<u64> = raw.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let codes = raw
            .iter()
            .map(|c| uniq.binary_search(c).unwrap() as u32)
            .collect();
        Factor {
            name: name.into(),
            codes,
            levels: uniq.iter().map(u64::to_string).collect(),
        }
    }

    /// Every combination of two factors observed in the data.
    pub fn interact(name: impl Into<String>, a: &Factor, b: &Factor) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid("interacted factors differ in length"));
        }
        let nb = b.n_levels() as u64;
        let raw: Vec<u64> = a
            .codes
            .iter()
            .zip(&b.codes)
            .map(|(&x, &y)| u64::from(x) * nb + u64::from(y))
            .collect();
        let mut f = Factor::from_codes(name, &raw);
        f.levels = f
            .levels
            .iter()
            .map(|s| {
                let c: u64 = s.parse().unwrap();
                format!("{}|{}", a.levels[(c / nb) as usize], b.levels[(c % nb) as usize])
            })
            .collect();
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.n_levels()];
        for &k in &self.codes {
            c[k as usize] += 1;
        }
        c
    }

    pub fn subset(&self, rows: &[usize]) -> Factor {
        let labels: Vec<&str> = rows
            .iter()
            .map(|&i| self.levels[self.codes[i] as usize].as_str())
            .collect();
        Factor::from_labels(self.name.clone(), &labels)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let l = self.n_levels() as u32;
        if self.codes.iter().any(|&c| c >= l) {
            return Err(Error::invalid(format!("factor `{}` has codes out of range", self.name)));
        }
        Ok(())
    }
}

/// Connected components of the bipartite graph linking the levels of two
/// factors that co-occur in some row.
pub fn connected_components(a: &Factor, b: &Factor) -> usize {
    let na = a.n_levels();
    let mut parent: Vec<usize> = (0..na + b.n_levels()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (&x, &y) in a.codes.iter().zip(&b.codes) {
        let rx = find(&mut parent, x as usize);
        let ry = find(&mut parent, na + y as usize);
        if rx != ry {
            parent[rx] = ry;
        }
    }
    (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count()
}

/// Degrees of freedom absorbed by the fixed effects.
///
/// One factor absorbs its level count. Two factors absorb `L1 + L2 - C` with
/// `C` the connected components of their level graph. With more factors the
/// count is the conservative `sum(L - 1) + 1`.
pub fn absorbed_dof(fe: &[Factor]) -> usize {
    match fe {
        [] => 0,
        [f] => f.n_levels(),
        [a, b] => a.n_levels() + b.n_levels() - connected_components(a, b),
        many => many.iter().map(|f| f.n_levels() - 1).sum::<usize>() + 1,
    }
}
