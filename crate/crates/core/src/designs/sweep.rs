use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ControlCoding, Dataset, FeLevel, FloorCoding, ModelSpec, SizeCoding};
use crate::error::Result;
use crate::solver::{FitResult, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepConfig {
    pub size: SizeCoding,
    pub floor: FloorCoding,
    pub fe_level: FeLevel,
    pub trim: bool,
}

impl SweepConfig {
    /// Log size, binned floor, OMI zone effects, trimmed.
    pub const CANONICAL: SweepConfig = SweepConfig {
        size: SizeCoding::Log,
        floor: FloorCoding::Binned,
        fe_level: FeLevel::OmiZone,
        trim: true,
    };

    pub fn apply(&self, base: &ModelSpec) -> ModelSpec {
        let mut spec = base.clone();
        spec.controls = ControlCoding {
            size: self.size,
            floor: self.floor,
        };
        spec.fe_level = self.fe_level;
        spec.cluster_level = self.fe_level;
        spec.outlier_trim = self.trim;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub sizes: Vec<SizeCoding>,
    pub floors: Vec<FloorCoding>,
    pub fe_levels: Vec<FeLevel>,
    pub trims: Vec<bool>,
}

impl SweepGrid {
    pub fn full() -> Self {
        SweepGrid {
            sizes: vec![SizeCoding::Linear, SizeCoding::Log, SizeCoding::Bins],
            floors: vec![FloorCoding::Raw, FloorCoding::Binned],
            fe_levels: FeLevel::ALL.to_vec(),
            trims: vec![true, false],
        }
    }

    /// Without municipality effects, which the event study cannot use.
    pub fn diff_in_diff() -> Self {
        SweepGrid {
            fe_levels: vec![FeLevel::OmiZone, FeLevel::CensusTract],
            ..Self::full()
        }
    }

    pub fn configs(&self) -> Vec<SweepConfig> {
        let mut out = Vec::new();
        for &size in &self.sizes {
            for &floor in &self.floors {
                for &fe_level in &self.fe_levels {
                    for &trim in &self.trims {
                        out.push(SweepConfig {
                            size,
                            floor,
                            fe_level,
                            trim,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub config: SweepConfig,
    pub canonical: bool,
    pub fit: std::result::Result<FitResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub design: String,
    /// Risk terms reported in the forest table.
    pub terms: Vec<String>,
    pub runs: Vec<SweepRun>,
}

/// One fit per grid configuration, in grid order. A failing configuration is
/// recorded and the sweep goes on.
pub fn run_sweep(grid: &SweepGrid, base: &ModelSpec, data: &Dataset, opts: &SolverOptions) -> SweepResult {
    let configs = grid.configs();
    let run = |c: &SweepConfig| {
        let fit = super::fit(&c.apply(base), data, opts).map_err(|e| e.to_string());
        if let Err(e) = &fit {
            log::warn!("sweep configuration {c:?} failed: {e}");
        }
        SweepRun {
            config: *c,
            canonical: *c == SweepConfig::CANONICAL,
            fit,
        }
    };
    #[cfg(feature = "parallel")]
    let runs: Vec<SweepRun> = {
        use rayon::prelude::*;
        configs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<SweepRun> = configs.iter().map(run).collect();

    let mut terms: Vec<String> = Vec::new();
    let prefixes: Vec<&str> = base.risk_terms.iter().map(|t| t.base.label()).collect();
    for r in &runs {
        if let Ok(f) = &r.fit {
            for c in &f.coefficients {
                let is_risk = prefixes
                    .iter()
                    .any(|p| c.name == *p || c.name.starts_with(&format!("{p}:")));
                if is_risk && !terms.contains(&c.name) {
                    terms.push(c.name.clone());
                }
            }
        }
    }
    SweepResult {
        design: base.name.clone(),
        terms,
        runs,
    }
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Forest-plot table, one row per (configuration, risk term).
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "size,floor,fe_level,trim,canonical,term,estimate,se,p,stars,status")?;
        for r in &self.runs {
            let c = &r.config;
            let prefix = format!(
                "{},{},{},{},{}",
                label(&c.size),
                label(&c.floor),
                c.fe_level.label(),
                if c.trim { "on" } else { "off" },
                r.canonical
            );
            match &r.fit {
                Ok(f) => {
                    for term in &self.terms {
                        match f.coefficient(term) {
                            Some(k) => writeln!(
                                w,
                                "{prefix},{term},{},{},{},{},ok",
                                k.estimate, k.se, k.p, k.stars
                            )?,
                            None => writeln!(w, "{prefix},{term},,,,,dropped")?,
                        }
                    }
                }
                Err(e) => {
                    let e = e.replace(['"', '\n'], " ");
                    writeln!(w, "{prefix},,,,,,\"error: {e}\"")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(SweepGrid::full().configs().len(), 36);
        assert_eq!(SweepGrid::diff_in_diff().configs().len(), 24);
        let canon = SweepGrid::full()
            .configs()
            .into_iter()
            .filter(|c| *c == SweepConfig::CANONICAL)
            .count();
        assert_eq!(canon, 1);
    }
}
