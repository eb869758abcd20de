//! Regression specifications: baseline hedonic model, event study,
//! heterogeneity interactions, income models and the robustness sweep.

mod bins;
mod columns;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bins::{Bin, TemporalBins, REFERENCE_BIN};
pub use columns::{build_controls, build_design, design_for, fit, income_terciles_by_region, sample_for, size_bin, Dataset};
pub use sweep::{run_sweep, SweepConfig, SweepGrid, SweepResult, SweepRun};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    LogPrice,
    LogIncome,
}

/// Spatial level of the fixed effects and of clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeLevel {
    Municipality,
    OmiZone,
    CensusTract,
}

impl FeLevel {
    pub const ALL: [FeLevel; 3] = [FeLevel::Municipality, FeLevel::OmiZone, FeLevel::CensusTract];

    pub fn label(self) -> &'static str {
        match self {
            FeLevel::Municipality => "municipality",
            FeLevel::OmiZone => "omi_zone",
            FeLevel::CensusTract => "census_tract",
        }
    }
}

impl FromStr for FeLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "municipality" => Ok(FeLevel::Municipality),
            "omi" | "omi_zone" => Ok(FeLevel::OmiZone),
            "tract" | "census_tract" => Ok(FeLevel::CensusTract),
            other => Err(Error::invalid(format!(
                "unknown fixed-effect level `{other}` (expected municipality, omi or tract)"
            ))),
        }
    }
}

impl fmt::Display for FeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeCoding {
    Linear,
    Log,
    Bins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorCoding {
    Raw,
    Binned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlCoding {
    pub size: SizeCoding,
    pub floor: FloorCoding,
}

impl Default for ControlCoding {
    fn default() -> Self {
        ControlCoding {
            size: SizeCoding::Log,
            floor: FloorCoding::Binned,
        }
    }
}

/// Indicator that a risk term starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseTerm {
    Risk,
    HitRisk,
    NoHitRisk,
    HighRisk,
    MediumRisk,
    LowRisk,
}

impl BaseTerm {
    pub fn label(self) -> &'static str {
        match self {
            BaseTerm::Risk => "risk",
            BaseTerm::HitRisk => "hit_risk",
            BaseTerm::NoHitRisk => "no_hit_risk",
            BaseTerm::HighRisk => "high_risk",
            BaseTerm::MediumRisk => "medium_risk",
            BaseTerm::LowRisk => "low_risk",
        }
    }
}

/// Categorical variables that risk terms can be crossed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Categorical {
    Region,
    Awareness,
    Age,
    IncomeLevel,
    EventBin,
}

impl Categorical {
    pub fn label(self) -> &'static str {
        match self {
            Categorical::Region => "region",
            Categorical::Awareness => "awareness",
            Categorical::Age => "age",
            Categorical::IncomeLevel => "income",
            Categorical::EventBin => "bin",
        }
    }
}

/// A base indicator times every level combination of its interactions.
/// With `omit_reference` the combination of all reference levels is left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub base: BaseTerm,
    #[serde(default)]
    pub interactions: Vec<Categorical>,
    #[serde(default)]
    pub omit_reference: bool,
}

impl RiskTerm {
    pub fn plain(base: BaseTerm) -> Self {
        RiskTerm {
            base,
            interactions: Vec::new(),
            omit_reference: false,
        }
    }

    pub fn crossed(base: BaseTerm, interactions: &[Categorical]) -> Self {
        RiskTerm {
            base,
            interactions: interactions.to_vec(),
            omit_reference: false,
        }
    }
}

/// Rows entering the regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleFilter {
    All,
    /// Homes in the listed regions (all regions when empty), with homes hit
    /// by the flood outside risk zones left out.
    EventStudy { regions: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub response: Response,
    pub risk_terms: Vec<RiskTerm>,
    /// Categorical main effects, reference level omitted.
    #[serde(default)]
    pub main_effects: Vec<Categorical>,
    pub controls: ControlCoding,
    pub fe_level: FeLevel,
    pub cluster_level: FeLevel,
    pub sample: SampleFilter,
    pub outlier_trim: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_bins: Option<TemporalBins>,
}

impl ModelSpec {
    fn new(name: &str, response: Response, risk_terms: Vec<RiskTerm>, fe_level: FeLevel) -> Self {
        ModelSpec {
            name: name.to_string(),
            response,
            risk_terms,
            main_effects: Vec::new(),
            controls: ControlCoding::default(),
            fe_level,
            cluster_level: fe_level,
            sample: SampleFilter::All,
            outlier_trim: true,
            event_bins: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_level != self.fe_level {
            return Err(Error::invalid("cluster level must equal the fixed-effect level"));
        }
        if self.risk_terms.is_empty() {
            return Err(Error::invalid("specification has no risk terms"));
        }
        let uses_bins = self
            .risk_terms
            .iter()
            .flat_map(|t| &t.interactions)
            .chain(&self.main_effects)
            .any(|c| *c == Categorical::EventBin);
        if uses_bins && self.event_bins.is_none() {
            return Err(Error::invalid("event-bin terms need event_bins"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Price on risk with hedonic controls and spatial and time effects.
pub fn build_baseline(fe_level: FeLevel) -> ModelSpec {
    ModelSpec::new("baseline", Response::LogPrice, vec![RiskTerm::plain(BaseTerm::Risk)], fe_level)
}

/// Event study around one flood: hit and near-miss risk indicators, each
/// also crossed with event-time bins (reference `pre 1y`).
pub fn build_diff_in_diff(bins: TemporalBins, regions: Vec<String>, fe_level: FeLevel) -> Result<ModelSpec> {
    if fe_level == FeLevel::Municipality {
        return Err(Error::invalid(
            "municipality fixed effects are collinear with the affected-municipality definition of near misses; use omi or tract",
        ));
    }
    let crossed = |base| RiskTerm {
        base,
        interactions: vec![Categorical::EventBin],
        omit_reference: true,
    };
    let mut spec = ModelSpec::new(
        "diff_in_diff",
        Response::LogPrice,
        vec![
            RiskTerm::plain(BaseTerm::HitRisk),
            RiskTerm::plain(BaseTerm::NoHitRisk),
            crossed(BaseTerm::HitRisk),
            crossed(BaseTerm::NoHitRisk),
        ],
        fe_level,
    );
    spec.sample = SampleFilter::EventStudy { regions };
    spec.event_bins = Some(bins);
    Ok(spec)
}

/// Risk crossed with region; no region main effect since regions are
/// unions of the spatial units.
pub fn build_region_interaction(fe_level: FeLevel) -> ModelSpec {
    ModelSpec::new(
        "region",
        Response::LogPrice,
        vec![RiskTerm::crossed(BaseTerm::Risk, &[Categorical::Region])],
        fe_level,
    )
}

pub fn build_awareness_interaction(fe_level: FeLevel) -> ModelSpec {
    let mut spec = ModelSpec::new(
        "awareness",
        Response::LogPrice,
        vec![RiskTerm::crossed(BaseTerm::Risk, &[Categorical::Awareness])],
        fe_level,
    );
    spec.main_effects = vec![Categorical::Awareness];
    spec
}

pub fn build_quadruple(fe_level: FeLevel) -> ModelSpec {
    let mut spec = ModelSpec::new(
        "quadruple",
        Response::LogPrice,
        vec![RiskTerm::crossed(
            BaseTerm::Risk,
            &[Categorical::Awareness, Categorical::Age, Categorical::IncomeLevel],
        )],
        fe_level,
    );
    spec.main_effects = vec![Categorical::IncomeLevel, Categorical::Age, Categorical::Awareness];
    spec
}

/// Income on risk, and income on risk crossed with age and awareness.
pub fn build_income_models(fe_level: FeLevel) -> (ModelSpec, ModelSpec) {
    let base = ModelSpec::new("income", Response::LogIncome, vec![RiskTerm::plain(BaseTerm::Risk)], fe_level);
    let mut triple = ModelSpec::new(
        "income_triple",
        Response::LogIncome,
        vec![RiskTerm::crossed(BaseTerm::Risk, &[Categorical::Age, Categorical::Awareness])],
        fe_level,
    );
    triple.main_effects = vec![Categorical::Age, Categorical::Awareness];
    (base, triple)
}

pub fn build_risk_levels(fe_level: FeLevel) -> ModelSpec {
    ModelSpec::new(
        "risk_levels",
        Response::LogPrice,
        vec![
            RiskTerm::plain(BaseTerm::HighRisk),
            RiskTerm::plain(BaseTerm::MediumRisk),
            RiskTerm::plain(BaseTerm::LowRisk),
        ],
        fe_level,
    )
}

/// Named cross-sectional design.
pub fn design_by_name(name: &str, fe_level: FeLevel) -> Result<ModelSpec> {
    match name {
        "baseline" => Ok(build_baseline(fe_level)),
        "region" => Ok(build_region_interaction(fe_level)),
        "awareness" => Ok(build_awareness_interaction(fe_level)),
        "quadruple" => Ok(build_quadruple(fe_level)),
        "income" => Ok(build_income_models(fe_level).0),
        "income_triple" => Ok(build_income_models(fe_level).1),
        "risk_levels" => Ok(build_risk_levels(fe_level)),
        other => Err(Error::invalid(format!(
            "unknown design `{other}` (expected baseline, region, awareness, quadruple, income, income_triple or risk_levels)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fe_level_parsing() {
        assert_eq!("omi".parse::<FeLevel>().unwrap(), FeLevel::OmiZone);
        assert_eq!("municipality".parse::<FeLevel>().unwrap(), FeLevel::Municipality);
        assert!("county".parse::<FeLevel>().is_err());
    }

    #[test]
    fn baseline_shapes() {
        let m3 = build_baseline(FeLevel::OmiZone);
        assert_eq!(m3.fe_level, FeLevel::OmiZone);
        assert_eq!(m3.cluster_level, FeLevel::OmiZone);
        assert_eq!(m3.risk_terms, vec![RiskTerm::plain(BaseTerm::Risk)]);
        assert_eq!(build_baseline(FeLevel::Municipality).cluster_level, FeLevel::Municipality);
    }

    #[test]
    fn diff_in_diff_rejects_municipality() {
        let d = |y, m, dd| chrono::NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let bins = TemporalBins::new(d(2023, 5, 16), d(2016, 1, 1), d(2024, 8, 31)).unwrap();
        assert!(build_diff_in_diff(bins.clone(), vec![], FeLevel::Municipality).is_err());
        let spec = build_diff_in_diff(bins, vec!["ER".into()], FeLevel::OmiZone).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = build_quadruple(FeLevel::CensusTract);
        let back = ModelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_design_name() {
        assert!(design_by_name("nonsense", FeLevel::OmiZone).is_err());
        assert_eq!(design_by_name("income_triple", FeLevel::OmiZone).unwrap().response, Response::LogIncome);
    }
}
