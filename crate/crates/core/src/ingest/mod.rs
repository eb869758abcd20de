//! Contract and cadastral record cleaning.
//!
//! Raw mortgage contracts are joined with the cadastral units pledged as
//! collateral, producing one [`Transaction`] per purchase. Filtering, floor
//! normalization and outlier trimming follow the cleaning rules used for the
//! national mortgage sample.

mod io;

pub use io::{
    read_binary_cache, read_binary_cache_with_note, read_cadaster_csv, read_contracts_csv, read_transactions_csv,
    write_binary_cache, write_cadaster_csv, write_contracts_csv, write_transactions_csv,
    CsvOptions, CACHE_MAGIC, CACHE_VERSION,
};

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplicantType {
    Single,
    Joint,
    Juridical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractStatus {
    Issued,
    UnderReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Purchase,
    Subrogation,
    Renovation,
    ConstructionResale,
    Other,
}

/// Cadastral category of a housing unit. `A01`..`A11` are residential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CadastralCode {
    A01,
    A02,
    A03,
    A04,
    A05,
    A06,
    A07,
    A08,
    A09,
    A10,
    A11,
    C02,
    C06,
    #[serde(rename = "other")]
    Other,
}

impl CadastralCode {
    pub const RESIDENTIAL: [CadastralCode; 11] = [
        CadastralCode::A01,
        CadastralCode::A02,
        CadastralCode::A03,
        CadastralCode::A04,
        CadastralCode::A05,
        CadastralCode::A06,
        CadastralCode::A07,
        CadastralCode::A08,
        CadastralCode::A09,
        CadastralCode::A10,
        CadastralCode::A11,
    ];

    pub fn is_residential(self) -> bool {
        Self::RESIDENTIAL.contains(&self)
    }

    pub fn label(self) -> &'static str {
        match self {
            CadastralCode::A01 => "A01",
            CadastralCode::A02 => "A02",
            CadastralCode::A03 => "A03",
            CadastralCode::A04 => "A04",
            CadastralCode::A05 => "A05",
            CadastralCode::A06 => "A06",
            CadastralCode::A07 => "A07",
            CadastralCode::A08 => "A08",
            CadastralCode::A09 => "A09",
            CadastralCode::A10 => "A10",
            CadastralCode::A11 => "A11",
            CadastralCode::C02 => "C02",
            CadastralCode::C06 => "C06",
            CadastralCode::Other => "other",
        }
    }
}

/// EU energy performance class, best (`A4`) to worst (`G`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnergyClass {
    A4,
    A3,
    A2,
    A1,
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl EnergyClass {
    pub const ALL: [EnergyClass; 11] = [
        EnergyClass::A4,
        EnergyClass::A3,
        EnergyClass::A2,
        EnergyClass::A1,
        EnergyClass::A,
        EnergyClass::B,
        EnergyClass::C,
        EnergyClass::D,
        EnergyClass::E,
        EnergyClass::F,
        EnergyClass::G,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EnergyClass::A4 => "A4",
            EnergyClass::A3 => "A3",
            EnergyClass::A2 => "A2",
            EnergyClass::A1 => "A1",
            EnergyClass::A => "A",
            EnergyClass::B => "B",
            EnergyClass::C => "C",
            EnergyClass::D => "D",
            EnergyClass::E => "E",
            EnergyClass::F => "F",
            EnergyClass::G => "G",
        }
    }
}

/// Construction-period bins used as hedonic controls; `<1955` is the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstructionYearBin {
    #[serde(rename = "<1955")]
    Before1955,
    #[serde(rename = "1955-1960")]
    Y1955,
    #[serde(rename = "1960-1965")]
    Y1960,
    #[serde(rename = "1965-1970")]
    Y1965,
    #[serde(rename = "1970-1975")]
    Y1970,
    #[serde(rename = "1975-1985")]
    Y1975,
    #[serde(rename = "1985-1995")]
    Y1985,
    #[serde(rename = "1995-2005")]
    Y1995,
    #[serde(rename = "2005-2015")]
    Y2005,
    #[serde(rename = "2015-2025")]
    Y2015,
    #[serde(rename = "missing")]
    Missing,
}

impl ConstructionYearBin {
    pub const ALL: [ConstructionYearBin; 11] = [
        ConstructionYearBin::Before1955,
        ConstructionYearBin::Y1955,
        ConstructionYearBin::Y1960,
        ConstructionYearBin::Y1965,
        ConstructionYearBin::Y1970,
        ConstructionYearBin::Y1975,
        ConstructionYearBin::Y1985,
        ConstructionYearBin::Y1995,
        ConstructionYearBin::Y2005,
        ConstructionYearBin::Y2015,
        ConstructionYearBin::Missing,
    ];

    /// Bins are half-open `[lo, hi)`; years from 2025 on fall in the last bin.
    pub fn from_year(year: Option<i32>) -> Self {
        let Some(y) = year else {
            return ConstructionYearBin::Missing;
        };
        match y {
            i32::MIN..=1954 => ConstructionYearBin::Before1955,
            1955..=1959 => ConstructionYearBin::Y1955,
            1960..=1964 => ConstructionYearBin::Y1960,
            1965..=1969 => ConstructionYearBin::Y1965,
            1970..=1974 => ConstructionYearBin::Y1970,
            1975..=1984 => ConstructionYearBin::Y1975,
            1985..=1994 => ConstructionYearBin::Y1985,
            1995..=2004 => ConstructionYearBin::Y1995,
            2005..=2014 => ConstructionYearBin::Y2005,
            _ => ConstructionYearBin::Y2015,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConstructionYearBin::Before1955 => "<1955",
            ConstructionYearBin::Y1955 => "1955-1960",
            ConstructionYearBin::Y1960 => "1960-1965",
            ConstructionYearBin::Y1965 => "1965-1970",
            ConstructionYearBin::Y1970 => "1970-1975",
            ConstructionYearBin::Y1975 => "1975-1985",
            ConstructionYearBin::Y1985 => "1985-1995",
            ConstructionYearBin::Y1995 => "1995-2005",
            ConstructionYearBin::Y2005 => "2005-2015",
            ConstructionYearBin::Y2015 => "2015-2025",
            ConstructionYearBin::Missing => "Missing",
        }
    }
}

/// Flood hazard class of a location. Ordered by severity.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    #[default]
    None,
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Some(RiskLevel::None),
            "low" | "p1" => Some(RiskLevel::Low),
            "medium" | "p2" => Some(RiskLevel::Medium),
            "high" | "p3" => Some(RiskLevel::High),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskLevel::None => "none",
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

/// Position of a home relative to a specific flood event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitClass {
    HitRisk,
    NoHitRisk,
    HitNoRisk,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawContract {
    pub contract_id: String,
    pub applicant_type: ApplicantType,
    pub status: ContractStatus,
    pub purpose: Purpose,
    pub auction_flag: bool,
    pub young_buyer_flag: bool,
    pub issuance_date: NaiveDate,
    pub construction_year: Option<i32>,
    pub price: Option<f64>,
    pub applicant_income: f64,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCadastralUnit {
    pub contract_id: String,
    pub cadastral_code: CadastralCode,
    pub floor_area: Option<f64>,
    pub energy_class: Option<EnergyClass>,
    pub air_conditioned_area: Option<f64>,
    pub floor_text: Option<String>,
}

/// Sentinel for a point contained in no unit of an administrative level.
pub const UNASSIGNED: &str = "unassigned";

/// One cleaned, mortgage-financed home sale.
///
/// Spatial identifiers, the risk level and awareness start as `None` and are
/// filled by the tagging stages; `Some(UNASSIGNED)` marks a point that fell
/// outside every unit of that level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: String,
    pub applicant_type: ApplicantType,
    pub status: ContractStatus,
    pub purpose: Purpose,
    pub auction_flag: bool,
    pub price: f64,
    pub log_price: f64,
    pub issuance_date: NaiveDate,
    pub monthly_income: f64,
    pub log_income: Option<f64>,
    pub surface_m2: f64,
    pub log_surface: f64,
    pub floor_min: Option<i32>,
    pub multi_floor_flag: Option<bool>,
    pub garage_flag: Option<bool>,
    pub annex_flag: Option<bool>,
    pub aircon_flag: Option<bool>,
    pub energy_class: Option<EnergyClass>,
    pub cadastral_code: CadastralCode,
    pub construction_year: Option<i32>,
    pub construction_year_bin: ConstructionYearBin,
    pub young_buyer_flag: bool,
    pub lat: f64,
    pub lon: f64,
    pub municipality_id: Option<String>,
    pub omi_zone_id: Option<String>,
    pub census_tract_id: Option<String>,
    pub province_id: Option<String>,
    pub region_id: Option<String>,
    pub risk_level: Option<RiskLevel>,
    pub hit_class: Option<HitClass>,
    pub awareness_at_sale: Option<f64>,
}

impl Transaction {
    /// At-risk indicator; `false` until the home has been risk-tagged.
    pub fn risk_flag(&self) -> bool {
        matches!(self.risk_level, Some(l) if l != RiskLevel::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownContract,
    NoResidentialUnits,
    MissingPrice,
    MissingSurface,
    MissingCoordinates,
    NotPurchase,
    ConstructionResale,
    NotIssued,
    Auction,
    Juridical,
    OutsideItaly,
    OutOfPeriod,
}

/// Per-reason counts of discarded records, plus the offending ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub counts: BTreeMap<RejectReason, usize>,
    pub rejected: Vec<(String, RejectReason)>,
}

impl RejectionReport {
    pub fn record(&mut self, id: &str, reason: RejectReason) {
        *self.counts.entry(reason).or_default() += 1;
        self.rejected.push((id.to_string(), reason));
    }

    pub fn total(&self) -> usize {
        self.rejected.len()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.counts.get(&reason).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: RejectionReport) {
        for (id, reason) in other.rejected {
            self.record(&id, reason);
        }
    }
}

/// Axis-aligned lon/lat box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    /// Box enclosing the Italian territory, islands included.
    pub const ITALY: BoundingBox = BoundingBox {
        min_lon: 6.6,
        min_lat: 35.4,
        max_lon: 18.6,
        max_lat: 47.1,
    };

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub region: BoundingBox,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            region: BoundingBox::ITALY,
            first_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            last_date: NaiveDate::from_ymd_opt(2024, 8, 31).unwrap(),
        }
    }
}

/// Map a raw floor description to `(minimum floor, spans multiple floors)`.
///
/// Ground-floor synonyms map to 0, dash-separated lists map to their minimum
/// with the multi-floor flag set. Anything else is missing.
pub fn normalize_floor(floor_text: Option<&str>) -> (Option<i32>, Option<bool>) {
    let Some(raw) = floor_text else {
        return (None, None);
    };
    let text = raw.trim().to_uppercase();
    if text.is_empty() {
        return (None, None);
    }
    if is_ground_synonym(&text) {
        return (Some(0), Some(false));
    }
    let body = text.strip_prefix("PIANO").map(str::trim).unwrap_or(&text);
    let mut floors = Vec::new();
    for part in body.split('-') {
        match parse_floor_component(part.trim()) {
            Some(f) => floors.push(f),
            None => {
                log::debug!("unparseable floor text {raw:?}");
                return (None, None);
            }
        }
    }
    let min = floors.iter().copied().min();
    let distinct = floors.iter().any(|&f| Some(f) != min);
    match min {
        Some(m) => (Some(m), Some(distinct)),
        None => (None, None),
    }
}

fn is_ground_synonym(text: &str) -> bool {
    matches!(
        text,
        "T" | "TERRA"
            | "PIANO TERRA"
            | "PIANOTERRA"
            | "RIALZATO"
            | "PIANO RIALZATO"
            | "RIALZAT"
            | "T-S1"
            | "PT"
    )
}

fn parse_floor_component(part: &str) -> Option<i32> {
    if part.is_empty() {
        return None;
    }
    if is_ground_synonym(part) {
        return Some(0);
    }
    if let Some(rest) = part.strip_prefix('S') {
        return rest.parse::<i32>().ok().filter(|&n| n > 0).map(|n| -n);
    }
    part.parse::<i32>().ok().filter(|n| (-5..=200).contains(n))
}

/// Join contracts with their cadastral units.
///
/// Residential floor areas are summed; garage and annex flags come from C06
/// and C02 units; energy class, floor and cadastral code are read from the
/// largest residential unit (ties go to the better energy class).
pub fn merge_contract_cadaster(
    contracts: &[RawContract],
    units: &[RawCadastralUnit],
) -> (Vec<Transaction>, RejectionReport) {
    let mut report = RejectionReport::default();
    let mut by_contract: HashMap<&str, Vec<&RawCadastralUnit>> = HashMap::new();
    let known: std::collections::HashSet<&str> =
        contracts.iter().map(|c| c.contract_id.as_str()).collect();
    for unit in units {
        if !known.contains(unit.contract_id.as_str()) {
            report.record(&unit.contract_id, RejectReason::UnknownContract);
            continue;
        }
        by_contract
            .entry(unit.contract_id.as_str())
            .or_default()
            .push(unit);
    }

    let mut out = Vec::with_capacity(contracts.len());
    for contract in contracts {
        let units = by_contract
            .get(contract.contract_id.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        match merge_one(contract, units) {
            Ok(t) => out.push(t),
            Err(reason) => report.record(&contract.contract_id, reason),
        }
    }
    (out, report)
}

fn positive(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite() && *x > 0.0)
}

fn merge_one(
    contract: &RawContract,
    units: &[&RawCadastralUnit],
) -> std::result::Result<Transaction, RejectReason> {
    let residential: Vec<&RawCadastralUnit> = units
        .iter()
        .copied()
        .filter(|u| u.cadastral_code.is_residential())
        .collect();
    if residential.is_empty() {
        return Err(RejectReason::NoResidentialUnits);
    }
    let price = positive(contract.price).ok_or(RejectReason::MissingPrice)?;
    let (lat, lon) = match (contract.latitude, contract.longitude) {
        (Some(lat), Some(lon)) if lat.is_finite() && lon.is_finite() => (lat, lon),
        _ => return Err(RejectReason::MissingCoordinates),
    };
    let areas: Vec<f64> = residential
        .iter()
        .filter_map(|u| positive(u.floor_area))
        .collect();
    if areas.is_empty() {
        return Err(RejectReason::MissingSurface);
    }
    let surface: f64 = areas.iter().sum();

    // Largest unit stands in for the most valuable one.
    let main = residential
        .iter()
        .copied()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let aa = positive(a.floor_area).unwrap_or(0.0);
            let ab = positive(b.floor_area).unwrap_or(0.0);
            aa.total_cmp(&ab)
                .then_with(|| energy_rank(b.energy_class).cmp(&energy_rank(a.energy_class)))
                .then_with(|| ib.cmp(ia))
        })
        .map(|(_, u)| u)
        .expect("non-empty");

    let garage = units.iter().any(|u| u.cadastral_code == CadastralCode::C06);
    let annex = units.iter().any(|u| u.cadastral_code == CadastralCode::C02);
    let aircon = if units.iter().all(|u| u.air_conditioned_area.is_none()) {
        None
    } else {
        Some(
            units
                .iter()
                .any(|u| u.air_conditioned_area.is_some_and(|a| a > 0.0)),
        )
    };
    let (floor_min, multi_floor_flag) = normalize_floor(main.floor_text.as_deref());
    let income = contract.applicant_income;

    Ok(Transaction {
        id: contract.contract_id.clone(),
        applicant_type: contract.applicant_type,
        status: contract.status,
        purpose: contract.purpose,
        auction_flag: contract.auction_flag,
        price,
        log_price: price.ln(),
        issuance_date: contract.issuance_date,
        monthly_income: income,
        log_income: (income > 0.0).then(|| income.ln()),
        surface_m2: surface,
        log_surface: surface.ln(),
        floor_min,
        multi_floor_flag,
        garage_flag: Some(garage),
        annex_flag: Some(annex),
        aircon_flag: aircon,
        energy_class: main.energy_class,
        cadastral_code: main.cadastral_code,
        construction_year: contract.construction_year,
        construction_year_bin: ConstructionYearBin::from_year(contract.construction_year),
        young_buyer_flag: contract.young_buyer_flag,
        lat,
        lon,
        municipality_id: None,
        omi_zone_id: None,
        census_tract_id: None,
        province_id: None,
        region_id: None,
        risk_level: None,
        hit_class: None,
        awareness_at_sale: None,
    })
}

// Lower is better; missing sorts last.
fn energy_rank(class: Option<EnergyClass>) -> usize {
    class.map_or(usize::MAX, |c| c as usize)
}

/// The reason a row fails the purchase-sample policy, if any.
pub fn rejection_reason(row: &Transaction, policy: &FilterPolicy) -> Option<RejectReason> {
    if row.purpose == Purpose::ConstructionResale {
        return Some(RejectReason::ConstructionResale);
    }
    if row.purpose != Purpose::Purchase {
        return Some(RejectReason::NotPurchase);
    }
    if row.status != ContractStatus::Issued {
        return Some(RejectReason::NotIssued);
    }
    if row.auction_flag {
        return Some(RejectReason::Auction);
    }
    if row.applicant_type == ApplicantType::Juridical {
        return Some(RejectReason::Juridical);
    }
    if !policy.region.contains(row.lon, row.lat) {
        return Some(RejectReason::OutsideItaly);
    }
    if row.issuance_date < policy.first_date || row.issuance_date > policy.last_date {
        return Some(RejectReason::OutOfPeriod);
    }
    None
}

/// Keep issued, non-auction purchases by physical persons located in Italy.
pub fn filter_transactions(
    rows: Vec<Transaction>,
    policy: &FilterPolicy,
) -> (Vec<Transaction>, RejectionReport) {
    let mut report = RejectionReport::default();
    let kept = rows
        .into_iter()
        .filter(|row| match rejection_reason(row, policy) {
            Some(reason) => {
                report.record(&row.id, reason);
                false
            }
            None => true,
        })
        .collect();
    (kept, report)
}

/// Per-person income for comparisons with individual tax records.
pub fn joint_income_adjust(income: f64, applicant_type: ApplicantType) -> Result<f64> {
    if !(income >= 0.0) {
        return Err(Error::invalid(format!("negative income {income}")));
    }
    match applicant_type {
        ApplicantType::Joint => Ok(income / 2.0),
        ApplicantType::Single => Ok(income),
        ApplicantType::Juridical => Err(Error::invalid(
            "juridical applicant should have been filtered out",
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimVar {
    Price,
    Surface,
    Income,
}

impl TrimVar {
    pub const DEFAULT: [TrimVar; 3] = [TrimVar::Price, TrimVar::Surface, TrimVar::Income];

    fn value(self, t: &Transaction) -> f64 {
        match self {
            TrimVar::Price => t.price,
            TrimVar::Surface => t.surface_m2,
            TrimVar::Income => t.monthly_income,
        }
    }
}

/// Default tail fraction removed on each side.
pub const TRIM_FRACTION: f64 = 0.001;

/// Inclusive linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Which rows lie inside the `[fraction, 1 - fraction]` quantile band of every
/// listed variable. Samples shorter than `1/fraction` are kept whole.
pub fn trim_mask(rows: &[&Transaction], vars: &[TrimVar], fraction: f64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::invalid(format!(
            "trim fraction {fraction} outside (0, 0.5)"
        )));
    }
    if (rows.len() as f64) < 1.0 / fraction {
        log::warn!(
            "trim skipped: {} rows is fewer than 1/fraction = {}",
            rows.len(),
            1.0 / fraction
        );
        return Ok(vec![true; rows.len()]);
    }
    let bounds: Vec<(TrimVar, f64, f64)> = vars
        .iter()
        .map(|&var| {
            let mut v: Vec<f64> = rows.iter().map(|t| var.value(t)).collect();
            v.sort_by(f64::total_cmp);
            (
                var,
                quantile_sorted(&v, fraction),
                quantile_sorted(&v, 1.0 - fraction),
            )
        })
        .collect();
    Ok(rows
        .iter()
        .map(|t| {
            bounds.iter().all(|&(var, lo, hi)| {
                let x = var.value(t);
                x >= lo && x <= hi
            })
        })
        .collect())
}

/// Drop rows lying strictly outside the `[fraction, 1 - fraction]` quantile
/// band of any listed variable. Returns the kept rows and the number removed.
pub fn trim_outliers(
    rows: Vec<Transaction>,
    vars: &[TrimVar],
    fraction: f64,
) -> Result<(Vec<Transaction>, usize)> {
    let mask = {
        let refs: Vec<&Transaction> = rows.iter().collect();
        trim_mask(&refs, vars, fraction)?
    };
    let before = rows.len();
    let kept: Vec<Transaction> = rows
        .into_iter()
        .zip(mask)
        .filter_map(|(t, keep)| keep.then_some(t))
        .collect();
    let removed = before - kept.len();
    Ok((kept, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn contract(id: &str) -> RawContract {
        RawContract {
            contract_id: id.into(),
            applicant_type: ApplicantType::Single,
            status: ContractStatus::Issued,
            purpose: Purpose::Purchase,
            auction_flag: false,
            young_buyer_flag: false,
            issuance_date: NaiveDate::from_ymd_opt(2019, 3, 1).unwrap(),
            construction_year: Some(1972),
            price: Some(150_000.0),
            applicant_income: 2500.0,
            latitude: Some(44.5),
            longitude: Some(11.3),
        }
    }

    fn unit(id: &str, code: CadastralCode, area: f64) -> RawCadastralUnit {
        RawCadastralUnit {
            contract_id: id.into(),
            cadastral_code: code,
            floor_area: Some(area),
            energy_class: None,
            air_conditioned_area: None,
            floor_text: None,
        }
    }

    #[test]
    fn garage_is_not_living_space() {
        let (rows, report) = merge_contract_cadaster(
            &[contract("c1")],
            &[
                unit("c1", CadastralCode::A02, 80.0),
                unit("c1", CadastralCode::C06, 15.0),
            ],
        );
        assert_eq!(report.total(), 0);
        assert_eq!(rows[0].surface_m2, 80.0);
        assert_eq!(rows[0].garage_flag, Some(true));
        assert_eq!(rows[0].annex_flag, Some(false));
    }

    #[test]
    fn joined_apartments_are_summed() {
        let (rows, _) = merge_contract_cadaster(
            &[contract("c1")],
            &[
                unit("c1", CadastralCode::A03, 50.0),
                unit("c1", CadastralCode::A03, 40.0),
            ],
        );
        assert_eq!(rows[0].surface_m2, 90.0);
    }

    #[test]
    fn garage_only_contract_is_rejected() {
        let (rows, report) =
            merge_contract_cadaster(&[contract("c1")], &[unit("c1", CadastralCode::C06, 15.0)]);
        assert!(rows.is_empty());
        assert_eq!(report.count(RejectReason::NoResidentialUnits), 1);
    }

    #[test]
    fn zero_area_is_missing() {
        let (rows, _) = merge_contract_cadaster(
            &[contract("c1")],
            &[
                unit("c1", CadastralCode::A02, 0.0),
                unit("c1", CadastralCode::A02, 70.0),
            ],
        );
        assert_eq!(rows[0].surface_m2, 70.0);
        let (rows, report) =
            merge_contract_cadaster(&[contract("c2")], &[unit("c2", CadastralCode::A02, 0.0)]);
        assert!(rows.is_empty());
        assert_eq!(report.count(RejectReason::MissingSurface), 1);
    }

    #[test]
    fn attributes_come_from_largest_unit() {
        let mut small = unit("c1", CadastralCode::A02, 30.0);
        small.energy_class = Some(EnergyClass::A4);
        small.floor_text = Some("3".into());
        let mut big = unit("c1", CadastralCode::A03, 60.0);
        big.energy_class = Some(EnergyClass::E);
        big.floor_text = Some("PIANO TERRA".into());
        big.air_conditioned_area = Some(0.0);
        let (rows, _) = merge_contract_cadaster(&[contract("c1")], &[small, big]);
        let t = &rows[0];
        assert_eq!(t.energy_class, Some(EnergyClass::E));
        assert_eq!(t.cadastral_code, CadastralCode::A03);
        assert_eq!(t.floor_min, Some(0));
        assert_eq!(t.aircon_flag, Some(false));
    }

    #[test]
    fn area_tie_prefers_better_energy_class() {
        let mut a = unit("c1", CadastralCode::A02, 50.0);
        a.energy_class = Some(EnergyClass::D);
        let mut b = unit("c1", CadastralCode::A02, 50.0);
        b.energy_class = Some(EnergyClass::B);
        let (rows, _) = merge_contract_cadaster(&[contract("c1")], &[a, b]);
        assert_eq!(rows[0].energy_class, Some(EnergyClass::B));
    }

    #[test]
    fn aircon_missing_when_absent_everywhere() {
        let (rows, _) =
            merge_contract_cadaster(&[contract("c1")], &[unit("c1", CadastralCode::A02, 50.0)]);
        assert_eq!(rows[0].aircon_flag, None);
        let mut u = unit("c1", CadastralCode::A02, 50.0);
        u.air_conditioned_area = Some(12.0);
        let (rows, _) = merge_contract_cadaster(&[contract("c1")], &[u]);
        assert_eq!(rows[0].aircon_flag, Some(true));
    }

    #[test]
    fn orphan_units_are_reported() {
        let (rows, report) =
            merge_contract_cadaster(&[contract("c1")], &[unit("zz", CadastralCode::A02, 50.0)]);
        assert!(rows.is_empty());
        assert_eq!(report.count(RejectReason::UnknownContract), 1);
        assert_eq!(report.count(RejectReason::NoResidentialUnits), 1);
    }

    #[test]
    fn floor_synonyms() {
        assert_eq!(normalize_floor(Some("PIANO TERRA")), (Some(0), Some(false)));
        assert_eq!(normalize_floor(Some(" t ")), (Some(0), Some(false)));
        assert_eq!(normalize_floor(Some("Terra")), (Some(0), Some(false)));
        assert_eq!(normalize_floor(Some("rialzato")), (Some(0), Some(false)));
        assert_eq!(normalize_floor(Some("T-S1")), (Some(0), Some(false)));
        assert_eq!(normalize_floor(Some("0-1-2")), (Some(0), Some(true)));
        assert_eq!(normalize_floor(Some("1-2")), (Some(1), Some(true)));
        assert_eq!(normalize_floor(Some("5")), (Some(5), Some(false)));
        assert_eq!(normalize_floor(Some("piano 3")), (Some(3), Some(false)));
        assert_eq!(normalize_floor(Some("attico??")), (None, None));
        assert_eq!(normalize_floor(Some("")), (None, None));
        assert_eq!(normalize_floor(None), (None, None));
    }

    fn merged(id: &str) -> Transaction {
        let (rows, _) = merge_contract_cadaster(&[contract(id)], &[unit(id, CadastralCode::A02, 80.0)]);
        rows.into_iter().next().unwrap()
    }

    #[test]
    fn filter_reasons() {
        let policy = FilterPolicy::default();
        let mut reno = merged("r");
        reno.purpose = Purpose::Renovation;
        let mut auction = merged("a");
        auction.auction_flag = true;
        let mut resale = merged("b");
        resale.purpose = Purpose::ConstructionResale;
        let mut jur = merged("j");
        jur.applicant_type = ApplicantType::Juridical;
        let mut review = merged("u");
        review.status = ContractStatus::UnderReview;
        let mut abroad = merged("x");
        abroad.lon = 2.35;
        abroad.lat = 48.85;
        let mut late = merged("l");
        late.issuance_date = NaiveDate::from_ymd_opt(2024, 9, 1).unwrap();
        let ok = merged("ok");
        let (kept, report) = filter_transactions(
            vec![reno, auction, resale, jur, review, abroad, late, ok],
            &policy,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "ok");
        for reason in [
            RejectReason::NotPurchase,
            RejectReason::Auction,
            RejectReason::ConstructionResale,
            RejectReason::Juridical,
            RejectReason::NotIssued,
            RejectReason::OutsideItaly,
            RejectReason::OutOfPeriod,
        ] {
            assert_eq!(report.count(reason), 1, "{reason:?}");
        }
    }

    #[test]
    fn joint_income_is_halved() {
        assert_eq!(joint_income_adjust(3000.0, ApplicantType::Joint).unwrap(), 1500.0);
        assert_eq!(joint_income_adjust(3000.0, ApplicantType::Single).unwrap(), 3000.0);
        assert_eq!(joint_income_adjust(0.0, ApplicantType::Joint).unwrap(), 0.0);
        assert!(joint_income_adjust(3000.0, ApplicantType::Juridical).is_err());
        assert!(joint_income_adjust(-1.0, ApplicantType::Single).is_err());
    }

    fn with_values(n: usize, f: impl Fn(usize) -> (f64, f64, f64)) -> Vec<Transaction> {
        let base = merged("t");
        (0..n)
            .map(|i| {
                let (p, s, inc) = f(i);
                let mut t = base.clone();
                t.id = format!("t{i}");
                t.price = p;
                t.surface_m2 = s;
                t.monthly_income = inc;
                t
            })
            .collect()
    }

    #[test]
    fn trims_ten_each_side_of_ten_thousand() {
        let rows = with_values(10_000, |i| ((i * 7919 % 10_000) as f64 + 1.0, 80.0, 2000.0));
        let (kept, removed) = trim_outliers(rows, &[TrimVar::Price], TRIM_FRACTION).unwrap();
        assert_eq!(removed, 20);
        let min = kept.iter().map(|t| t.price).fold(f64::INFINITY, f64::min);
        let max = kept.iter().map(|t| t.price).fold(0.0, f64::max);
        assert_eq!(min, 11.0);
        assert_eq!(max, 9990.0);
    }

    #[test]
    fn constant_values_are_not_trimmed() {
        let rows = with_values(5000, |_| (100_000.0, 80.0, 2000.0));
        let (kept, removed) = trim_outliers(rows, &TrimVar::DEFAULT, TRIM_FRACTION).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(kept.len(), 5000);
    }

    #[test]
    fn doubly_extreme_row_removed_once() {
        // Row 0 is the cheapest and the poorest: removed once, not twice.
        let rows = with_values(2000, |i| (i as f64 + 1.0, 80.0, i as f64 + 100.0));
        let (kept, removed) = trim_outliers(rows.clone(), &TrimVar::DEFAULT, TRIM_FRACTION).unwrap();
        // Brute force: sort-and-slice bounds per variable, union of outside rows.
        let mut outside = std::collections::BTreeSet::new();
        for var in TrimVar::DEFAULT {
            let mut v: Vec<f64> = rows.iter().map(|t| var.value(t)).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let lo_pos = (n - 1.0) * TRIM_FRACTION;
            let hi_pos = (n - 1.0) * (1.0 - TRIM_FRACTION);
            let lo = v[lo_pos as usize] + lo_pos.fract() * (v[lo_pos as usize + 1] - v[lo_pos as usize]);
            let hi = v[hi_pos as usize] + hi_pos.fract() * (v[hi_pos as usize + 1] - v[hi_pos as usize]);
            for t in &rows {
                let x = var.value(t);
                if x < lo || x > hi {
                    outside.insert(t.id.clone());
                }
            }
        }
        assert_eq!(removed, outside.len());
        assert_eq!(removed, 4);
        assert!(kept.iter().all(|t| !outside.contains(&t.id)));
    }

    #[test]
    fn tiny_samples_skip_trimming() {
        let rows = with_values(50, |i| (i as f64, 80.0, 2000.0));
        let (kept, removed) = trim_outliers(rows, &TrimVar::DEFAULT, TRIM_FRACTION).unwrap();
        assert_eq!((kept.len(), removed), (50, 0));
        assert!(trim_outliers(vec![], &TrimVar::DEFAULT, 0.7).is_err());
    }

    #[test]
    fn construction_bins() {
        assert_eq!(ConstructionYearBin::from_year(Some(1954)), ConstructionYearBin::Before1955);
        assert_eq!(ConstructionYearBin::from_year(Some(1955)), ConstructionYearBin::Y1955);
        assert_eq!(ConstructionYearBin::from_year(Some(1984)), ConstructionYearBin::Y1975);
        assert_eq!(ConstructionYearBin::from_year(Some(2024)), ConstructionYearBin::Y2015);
        assert_eq!(ConstructionYearBin::from_year(None), ConstructionYearBin::Missing);
    }
}
