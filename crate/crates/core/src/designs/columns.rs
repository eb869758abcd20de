use std::collections::{BTreeMap, BTreeSet};

use chrono::Datelike;

use super::{BaseTerm, Categorical, ControlCoding, FeLevel, FloorCoding, ModelSpec, Response, SampleFilter, SizeCoding, REFERENCE_BIN};
use crate::awareness::awareness_terciles;
use crate::error::{Error, Result};
use crate::ingest::{trim_mask, CadastralCode, ConstructionYearBin, EnergyClass, HitClass, RiskLevel, Transaction, TrimVar, TRIM_FRACTION};
use crate::solver::{estimate, DesignMatrix, Factor, FitResult, SolverOptions};
use crate::stats::{tercile_split, Tercile};

/// Transactions plus labels computed once over the whole sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<Transaction>,
    awareness: std::result::Result<Vec<Tercile>, String>,
    income: std::result::Result<Vec<Tercile>, String>,
}

impl Dataset {
    pub fn new(rows: Vec<Transaction>) -> Self {
        let awareness = awareness_terciles(&rows)
            .map(|s| s.labels)
            .map_err(|e| e.to_string());
        let income = income_terciles_by_region(&rows).map_err(|e| e.to_string());
        Dataset {
            rows,
            awareness,
            income,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn awareness_terciles(&self) -> Result<&[Tercile]> {
        self.awareness
            .as_deref()
            .map_err(|e| Error::invalid(format!("awareness terciles unavailable: {e}")))
    }

    pub fn income_terciles(&self) -> Result<&[Tercile]> {
        self.income
            .as_deref()
            .map_err(|e| Error::invalid(format!("income terciles unavailable: {e}")))
    }
}

/// Income terciles computed separately inside each region.
pub fn income_terciles_by_region(rows: &[Transaction]) -> Result<Vec<Tercile>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in rows.iter().enumerate() {
        let r = t
            .region_id
            .as_deref()
            .ok_or_else(|| Error::MissingColumns("region_id".into()))?;
        groups.entry(r).or_default().push(i);
    }
    let mut out = vec![Tercile::Low; rows.len()];
    for (region, idx) in groups {
        let incomes: Vec<f64> = idx.iter().map(|&i| rows[i].monthly_income).collect();
        let split = tercile_split(&incomes).map_err(|e| Error::invalid(format!("region {region}: {e}")))?;
        for (&i, l) in idx.iter().zip(split.labels) {
            out[i] = l;
        }
    }
    Ok(out)
}

pub fn size_bin(surface_m2: f64) -> &'static str {
    if surface_m2 < 50.0 {
        "<50"
    } else if surface_m2 < 85.0 {
        "50-85"
    } else if surface_m2 < 115.0 {
        "85-115"
    } else if surface_m2 < 145.0 {
        "115-145"
    } else {
        ">145"
    }
}

fn floor_bin(floor: Option<i32>) -> &'static str {
    match floor {
        None => "Missing",
        Some(f) if f <= 0 => "0",
        Some(1) => "1",
        Some(2) => "2",
        Some(3) => "3",
        Some(_) => "4+",
    }
}

fn indicator(rows: &[&Transaction], f: impl Fn(&Transaction) -> bool) -> Vec<f64> {
    rows.iter().map(|t| if f(t) { 1.0 } else { 0.0 }).collect()
}

/// Dummies for each level present in `rows` except `reference`, in `order`.
fn dummies<L: PartialEq + Copy>(
    out: &mut Vec<(String, Vec<f64>)>,
    rows: &[&Transaction],
    prefix: &str,
    order: &[L],
    reference: L,
    get: impl Fn(&Transaction) -> L,
    label: impl Fn(L) -> String,
) {
    let values: Vec<L> = rows.iter().map(|t| get(t)).collect();
    for &level in order {
        if level == reference || !values.contains(&level) {
            continue;
        }
        let col = values.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect();
        out.push((format!("{prefix}={}", label(level)), col));
    }
}

/// Flag plus a missing-value dummy when any value is missing.
fn flag(out: &mut Vec<(String, Vec<f64>)>, rows: &[&Transaction], name: &str, get: impl Fn(&Transaction) -> Option<bool>) {
    out.push((name.to_string(), indicator(rows, |t| get(t) == Some(true))));
    if rows.iter().any(|t| get(t).is_none()) {
        out.push((format!("{name}=Missing"), indicator(rows, |t| get(t).is_none())));
    }
}

/// Hedonic control columns for the given rows.
pub fn build_controls(rows: &[&Transaction], coding: ControlCoding) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    match coding.size {
        SizeCoding::Linear => out.push(("surface_m2".into(), rows.iter().map(|t| t.surface_m2).collect())),
        SizeCoding::Log => out.push(("log_surface".into(), rows.iter().map(|t| t.log_surface).collect())),
        SizeCoding::Bins => {
            let order = ["<50", "50-85", "85-115", "115-145", ">145"];
            dummies(&mut out, rows, "size", &order, "<50", |t| size_bin(t.surface_m2), str::to_string);
        }
    }
    match coding.floor {
        FloorCoding::Raw => {
            out.push(("floor".into(), rows.iter().map(|t| f64::from(t.floor_min.unwrap_or(0))).collect()));
            if rows.iter().any(|t| t.floor_min.is_none()) {
                out.push(("floor=Missing".into(), indicator(rows, |t| t.floor_min.is_none())));
            }
        }
        FloorCoding::Binned => {
            let order = ["0", "1", "2", "3", "4+", "Missing"];
            dummies(&mut out, rows, "floor", &order, "0", |t| floor_bin(t.floor_min), str::to_string);
        }
    }
    flag(&mut out, rows, "multi_floor", |t| t.multi_floor_flag);
    flag(&mut out, rows, "garage", |t| t.garage_flag);
    flag(&mut out, rows, "annex", |t| t.annex_flag);
    flag(&mut out, rows, "aircon", |t| t.aircon_flag);

    let energy: Vec<Option<EnergyClass>> = EnergyClass::ALL.iter().copied().map(Some).chain([None]).collect();
    dummies(&mut out, rows, "energy", &energy, Some(EnergyClass::A), |t| t.energy_class, |e| {
        e.map_or("Missing".to_string(), |e| e.label().to_string())
    });
    let mut cadastral: Vec<CadastralCode> = rows.iter().map(|t| t.cadastral_code).collect::<BTreeSet<_>>().into_iter().collect();
    cadastral.sort_by_key(|c| c.label());
    dummies(&mut out, rows, "cadastral", &cadastral, CadastralCode::A01, |t| t.cadastral_code, |c| {
        c.label().to_string()
    });
    dummies(
        &mut out,
        rows,
        "built",
        &ConstructionYearBin::ALL,
        ConstructionYearBin::Before1955,
        |t| t.construction_year_bin,
        |b| b.label().to_string(),
    );
    out
}

struct Cat {
    name: &'static str,
    levels: Vec<String>,
    reference: usize,
    codes: Vec<usize>,
}

fn tercile_cat(name: &'static str, labels: &[Tercile], idx: &[usize]) -> Cat {
    Cat {
        name,
        levels: Tercile::ALL.iter().map(|t| t.label().to_string()).collect(),
        reference: 0,
        codes: idx.iter().map(|&i| labels[i] as usize).collect(),
    }
}

fn categorical(c: Categorical, spec: &ModelSpec, data: &Dataset, idx: &[usize]) -> Result<Cat> {
    let rows = &data.rows;
    Ok(match c {
        Categorical::Region => {
            let ids: Vec<&str> = idx
                .iter()
                .map(|&i| rows[i].region_id.as_deref().ok_or_else(|| Error::MissingColumns("region_id".into())))
                .collect::<Result<_>>()?;
            let levels: Vec<String> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
            let codes = ids.iter().map(|r| levels.binary_search_by(|l| l.as_str().cmp(r)).unwrap()).collect();
            Cat {
                name: "region",
                levels,
                reference: 0,
                codes,
            }
        }
        Categorical::Awareness => tercile_cat("awareness", data.awareness_terciles()?, idx),
        Categorical::IncomeLevel => tercile_cat("income", data.income_terciles()?, idx),
        Categorical::Age => Cat {
            name: "age",
            levels: vec!["not_young".into(), "young".into()],
            reference: 0,
            codes: idx.iter().map(|&i| usize::from(rows[i].young_buyer_flag)).collect(),
        },
        Categorical::EventBin => {
            let bins = spec
                .event_bins
                .as_ref()
                .ok_or_else(|| Error::invalid("event-bin terms need event_bins"))?;
            let levels = bins.labels();
            let reference = levels
                .iter()
                .position(|l| l == REFERENCE_BIN)
                .ok_or_else(|| Error::invalid("sample period does not reach the reference bin"))?;
            let codes = idx
                .iter()
                .map(|&i| {
                    let l = bins.label_of(rows[i].issuance_date);
                    levels
                        .iter()
                        .position(|x| *x == l)
                        .ok_or_else(|| Error::invalid(format!("sale date {} outside event bins", rows[i].issuance_date)))
                })
                .collect::<Result<_>>()?;
            Cat {
                name: "bin",
                levels,
                reference,
                codes,
            }
        }
    })
}

fn base_indicator(base: BaseTerm, t: &Transaction) -> Result<bool> {
    let level = || t.risk_level.ok_or_else(|| Error::MissingColumns("risk_level".into()));
    let hit = || t.hit_class.ok_or_else(|| Error::MissingColumns("hit_class".into()));
    Ok(match base {
        BaseTerm::Risk => level()? != RiskLevel::None,
        BaseTerm::HighRisk => level()? == RiskLevel::High,
        BaseTerm::MediumRisk => level()? == RiskLevel::Medium,
        BaseTerm::LowRisk => level()? == RiskLevel::Low,
        BaseTerm::HitRisk => hit()? == HitClass::HitRisk,
        BaseTerm::NoHitRisk => hit()? == HitClass::NoHitRisk,
    })
}

fn spatial_id(t: &Transaction, level: FeLevel) -> Result<&str> {
    let id = match level {
        FeLevel::Municipality => t.municipality_id.as_deref(),
        FeLevel::OmiZone => t.omi_zone_id.as_deref(),
        FeLevel::CensusTract => t.census_tract_id.as_deref(),
    };
    id.ok_or_else(|| Error::MissingColumns(format!("{}_id", level.label())))
}

/// Row indices passing the spec's sample filter and response availability.
fn sample_rows(spec: &ModelSpec, data: &Dataset) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(data.len());
    for (i, t) in data.rows.iter().enumerate() {
        if spec.response == Response::LogIncome && t.log_income.is_none() {
            continue;
        }
        if let SampleFilter::EventStudy { regions } = &spec.sample {
            let class = t.hit_class.ok_or_else(|| Error::MissingColumns("hit_class".into()))?;
            if class == HitClass::HitNoRisk {
                continue;
            }
            let region = t.region_id.as_deref().ok_or_else(|| Error::MissingColumns("region_id".into()))?;
            if !regions.is_empty() && !regions.iter().any(|r| r == region) {
                continue;
            }
        }
        idx.push(i);
    }
    if idx.is_empty() {
        return Err(Error::invalid("sample is empty"));
    }
    Ok(idx)
}

/// Design matrix for the spec over the given rows of `data`.
pub fn build_design(spec: &ModelSpec, data: &Dataset, idx: &[usize]) -> Result<DesignMatrix> {
    let rows: Vec<&Transaction> = idx.iter().map(|&i| &data.rows[i]).collect();
    let n = rows.len();
    let response: Vec<f64> = match spec.response {
        Response::LogPrice => rows.iter().map(|t| t.log_price).collect(),
        Response::LogIncome => rows
            .iter()
            .map(|t| t.log_income.ok_or_else(|| Error::MissingColumns("log_income".into())))
            .collect::<Result<_>>()?,
    };
    if response.iter().all(|&v| v == response[0]) {
        return Err(Error::invalid("response has zero variance"));
    }

    let mut names = Vec::new();
    let mut columns = Vec::new();
    for term in &spec.risk_terms {
        let base: Vec<bool> = rows.iter().map(|t| base_indicator(term.base, t)).collect::<Result<_>>()?;
        let cats: Vec<Cat> = term
            .interactions
            .iter()
            .map(|&c| categorical(c, spec, data, idx))
            .collect::<Result<_>>()?;
        let cells: usize = cats.iter().map(|c| c.levels.len()).product();
        let mut block = vec![vec![0.0; n]; cells];
        for i in 0..n {
            if base[i] {
                let cell = cats.iter().fold(0, |acc, c| acc * c.levels.len() + c.codes[i]);
                block[cell][i] = 1.0;
            }
        }
        for (cell, col) in block.into_iter().enumerate() {
            let mut rem = cell;
            let mut parts = Vec::with_capacity(cats.len());
            let mut all_ref = true;
            for c in cats.iter().rev() {
                let l = rem % c.levels.len();
                rem /= c.levels.len();
                all_ref &= l == c.reference;
                parts.push(format!("{}={}", c.name, c.levels[l]));
            }
            if term.omit_reference && !cats.is_empty() && all_ref {
                continue;
            }
            parts.reverse();
            let mut name = term.base.label().to_string();
            for p in parts {
                name.push(':');
                name.push_str(&p);
            }
            names.push(name);
            columns.push(col);
        }
    }
    for &c in &spec.main_effects {
        let cat = categorical(c, spec, data, idx)?;
        for (l, level) in cat.levels.iter().enumerate() {
            if l == cat.reference {
                continue;
            }
            names.push(format!("{}={level}", cat.name));
            columns.push(cat.codes.iter().map(|&x| if x == l { 1.0 } else { 0.0 }).collect());
        }
    }
    for (name, col) in build_controls(&rows, spec.controls) {
        names.push(name);
        columns.push(col);
    }

    let spatial: Vec<&str> = rows.iter().map(|t| spatial_id(t, spec.fe_level)).collect::<Result<_>>()?;
    let spatial = Factor::from_labels(spec.fe_level.label(), &spatial);
    let year_province: Vec<String> = rows
        .iter()
        .map(|t| {
            let p = t.province_id.as_deref().ok_or_else(|| Error::MissingColumns("province_id".into()))?;
            Ok(format!("{}|{p}", t.issuance_date.year()))
        })
        .collect::<Result<_>>()?;
    let year_province = Factor::from_labels("year_province", &year_province);
    let month: Vec<u64> = rows.iter().map(|t| u64::from(t.issuance_date.month())).collect();
    let month = Factor::from_codes("month", &month);
    let cluster = if spec.cluster_level == spec.fe_level {
        spatial.clone()
    } else {
        let ids: Vec<&str> = rows.iter().map(|t| spatial_id(t, spec.cluster_level)).collect::<Result<_>>()?;
        Factor::from_labels(spec.cluster_level.label(), &ids)
    };
    Ok(DesignMatrix {
        response_name: match spec.response {
            Response::LogPrice => "log_price".into(),
            Response::LogIncome => "log_income".into(),
        },
        response,
        names,
        columns,
        fixed_effects: vec![spatial, year_province, month],
        cluster,
    })
}

/// Sample, trim, build columns and estimate.
pub fn fit(spec: &ModelSpec, data: &Dataset, opts: &SolverOptions) -> Result<FitResult> {
    let design = design_for(spec, data)?;
    estimate(&design, opts)
}

/// Rows of `data` entering the estimation, in order: the spec's sample
/// after outlier trimming. Residuals of a fit line up with these rows.
pub fn sample_for(spec: &ModelSpec, data: &Dataset) -> Result<Vec<usize>> {
    spec.validate().map_err(|e| e.at("spec"))?;
    let mut idx = sample_rows(spec, data).map_err(|e| e.at("sample"))?;
    if spec.outlier_trim {
        let refs: Vec<&Transaction> = idx.iter().map(|&i| &data.rows[i]).collect();
        let mask = trim_mask(&refs, &TrimVar::DEFAULT, TRIM_FRACTION).map_err(|e| e.at("trim"))?;
        idx = idx.into_iter().zip(mask).filter_map(|(i, k)| k.then_some(i)).collect();
    }
    Ok(idx)
}

/// Design matrix after sampling and trimming.
pub fn design_for(spec: &ModelSpec, data: &Dataset) -> Result<DesignMatrix> {
    let idx = sample_for(spec, data)?;
    build_design(spec, data, &idx).map_err(|e| e.at("build_columns"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{build_awareness_interaction, build_quadruple, build_region_interaction};
    use crate::ingest::{ApplicantType, ContractStatus, Purpose};
    use chrono::NaiveDate;

    pub(crate) fn row(i: usize) -> Transaction {
        let price = 100_000.0 + 1000.0 * (i % 17) as f64;
        let surface = 60.0 + (i % 23) as f64 * 3.0;
        Transaction {
            id: format!("t{i}"),
            applicant_type: ApplicantType::Single,
            status: ContractStatus::Issued,
            purpose: Purpose::Purchase,
            auction_flag: false,
            price,
            log_price: price.ln(),
            issuance_date: NaiveDate::from_ymd_opt(2017 + (i % 5) as i32, 1 + (i % 12) as u32, 10).unwrap(),
            monthly_income: 2000.0 + (i * 37 % 1000) as f64,
            log_income: Some((2000.0 + (i * 37 % 1000) as f64).ln()),
            surface_m2: surface,
            log_surface: surface.ln(),
            floor_min: if i % 11 == 0 { None } else { Some((i % 7) as i32) },
            multi_floor_flag: Some(i % 5 == 0),
            garage_flag: Some(i % 3 == 0),
            annex_flag: None,
            aircon_flag: Some(i % 2 == 0),
            energy_class: if i % 9 == 0 { None } else { Some(EnergyClass::ALL[i % 11]) },
            cadastral_code: if i % 4 == 0 { CadastralCode::A03 } else { CadastralCode::A02 },
            construction_year: Some(1950 + (i % 70) as i32),
            construction_year_bin: ConstructionYearBin::from_year(Some(1950 + (i % 70) as i32)),
            young_buyer_flag: i % 6 == 0,
            lat: 44.0,
            lon: 11.0,
            municipality_id: Some(format!("m{}", i % 10)),
            omi_zone_id: Some(format!("z{}", i % 20)),
            census_tract_id: Some(format!("c{}", i % 40)),
            province_id: Some(format!("p{}", i % 3)),
            region_id: Some(format!("r{}", i % 2)),
            risk_level: Some([RiskLevel::None, RiskLevel::Low, RiskLevel::None, RiskLevel::High][i % 4]),
            hit_class: None,
            awareness_at_sale: Some((i % 13) as f64 * 0.1),
        }
    }

    fn data(n: usize) -> Dataset {
        Dataset::new((0..n).map(row).collect())
    }

    #[test]
    fn control_examples() {
        let mut t = row(1);
        t.floor_min = Some(7);
        t.energy_class = None;
        t.surface_m2 = 100.0;
        t.log_surface = 100f64.ln();
        let mut u = row(2);
        u.floor_min = Some(0);
        u.energy_class = Some(EnergyClass::A);
        let rows = [&t, &u];
        let cols: BTreeMap<String, Vec<f64>> = build_controls(&rows, ControlCoding::default()).into_iter().collect();
        assert_eq!(cols["floor=4+"], vec![1.0, 0.0]);
        assert_eq!(cols["energy=Missing"], vec![1.0, 0.0]);
        assert!((cols["log_surface"][0] - 4.6052).abs() < 1e-4);
        assert!(!cols.contains_key("floor=0"));
        assert!(!cols.contains_key("energy=A"));
    }

    #[test]
    fn size_bins() {
        assert_eq!(size_bin(49.9), "<50");
        assert_eq!(size_bin(50.0), "50-85");
        assert_eq!(size_bin(145.0), ">145");
    }

    #[test]
    fn region_interaction_columns() {
        let d = data(200);
        let spec = build_region_interaction(FeLevel::OmiZone);
        let idx: Vec<usize> = (0..d.len()).collect();
        let m = build_design(&spec, &d, &idx).unwrap();
        let risk: Vec<&String> = m.names.iter().filter(|n| n.starts_with("risk:")).collect();
        assert_eq!(risk, vec!["risk:region=r0", "risk:region=r1"]);
    }

    #[test]
    fn awareness_columns_three_plus_two() {
        let d = data(200);
        let spec = build_awareness_interaction(FeLevel::OmiZone);
        let idx: Vec<usize> = (0..d.len()).collect();
        let m = build_design(&spec, &d, &idx).unwrap();
        let n = m.names.iter().filter(|n| n.starts_with("risk:") || n.starts_with("awareness=")).count();
        assert_eq!(n, 5);
        assert!(!m.names.contains(&"awareness=low".to_string()));
    }

    #[test]
    fn all_low_awareness_is_error() {
        let mut rows: Vec<Transaction> = (0..50).map(row).collect();
        rows.iter_mut().for_each(|t| t.awareness_at_sale = Some(0.0));
        let d = Dataset::new(rows);
        let spec = build_awareness_interaction(FeLevel::OmiZone);
        assert!(fit(&spec, &d, &SolverOptions::default()).is_err());
    }

    #[test]
    fn quadruple_has_eighteen_risk_columns() {
        let d = data(400);
        let spec = build_quadruple(FeLevel::OmiZone);
        let idx: Vec<usize> = (0..d.len()).collect();
        let m = build_design(&spec, &d, &idx).unwrap();
        assert_eq!(m.names.iter().filter(|n| n.starts_with("risk:")).count(), 18);
        assert!(m.names.contains(&"risk:awareness=high:age=young:income=medium".to_string()));
    }

    #[test]
    fn regional_income_terciles_balanced() {
        let d = data(301);
        let labels = d.income_terciles().unwrap();
        for r in ["r0", "r1"] {
            let idx: Vec<usize> = (0..d.len()).filter(|&i| d.rows[i].region_id.as_deref() == Some(r)).collect();
            let n = idx.len() as f64;
            for t in Tercile::ALL {
                let c = idx.iter().filter(|&&i| labels[i] == t).count() as f64;
                assert!((c - n / 3.0).abs() <= 1.0 + 1e-9, "{r} {t:?} {c} of {n}");
            }
        }
    }

    #[test]
    fn zero_risk_sample_drops_risk() {
        let mut rows: Vec<Transaction> = (0..120).map(row).collect();
        rows.iter_mut().for_each(|t| t.risk_level = Some(RiskLevel::None));
        let d = Dataset::new(rows);
        let fit = fit(&crate::designs::build_risk_levels(FeLevel::OmiZone), &d, &SolverOptions::default()).unwrap();
        for n in ["high_risk", "medium_risk", "low_risk"] {
            assert!(fit.is_dropped(n));
        }
    }

    #[test]
    fn zero_variance_income_is_error() {
        let mut rows: Vec<Transaction> = (0..60).map(row).collect();
        rows.iter_mut().for_each(|t| t.log_income = Some(7.0));
        let d = Dataset::new(rows);
        let spec = crate::designs::build_income_models(FeLevel::OmiZone).0;
        let err = fit(&spec, &d, &SolverOptions::default()).unwrap_err();
        assert_eq!(err.stage(), Some("build_columns"));
    }
}
