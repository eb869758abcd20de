use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Months;
use serde::Serialize;
use serde_json::{json, Value};

use floodmem::awareness::{attach_awareness, write_series_csv, EventHistory, HalfLife};
use floodmem::designs::{
    build_diff_in_diff, design_by_name, run_sweep, sample_for, Dataset, FeLevel, ModelSpec, SweepGrid, TemporalBins,
    REFERENCE_BIN,
};
use floodmem::diagnostics::{
    aggregate_residuals_by_unit, balance_tests, global_morans_i, lisa, BalanceVariable, DiagnosticsReport, MoranMethod,
};
use floodmem::geo::{self, queen_contiguity, AdminLayers, IndexedLayer, LayerKind, PolygonLayer};
use floodmem::ingest::{self, CsvOptions, FilterPolicy, HitClass, Transaction};
use floodmem::solver::{estimate, FitResult, SolverOptions};
use floodmem::synth::{self, DgpConfig};

use crate::config::{require, EventConfig, Inputs, RunConfig};
use crate::CliError;

const TRANSACTIONS_BIN: &str = "transactions.bin";
const TRANSACTIONS_CSV: &str = "transactions.csv";

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub tau: HalfLife,
    pub fe: FeLevel,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let tau = HalfLife::parse(&cfg.tau).map_err(|e| CliError::usage(e.to_string()))?;
        let fe = cfg.fe.parse::<FeLevel>().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(Context {
            hash: cfg.hash(),
            cfg,
            tau,
            fe,
        })
    }

    fn header(&self) -> String {
        format!("floodmem {} config-sha256 {}", env!("CARGO_PKG_VERSION"), self.hash)
    }

    fn out(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.cfg.out)?;
        Ok(self.cfg.out.join(name))
    }

    fn csv_opts(&self) -> Result<CsvOptions, CliError> {
        Ok(CsvOptions {
            delimiter: self.cfg.delimiter()?,
            comment: None,
        })
    }

    /// JSON document wrapping `result` with the tool version and config hash.
    fn envelope<T: Serialize>(&self, result: &T) -> Result<Value, CliError> {
        Ok(json!({
            "tool": "floodmem",
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": self.hash,
            "result": serde_json::to_value(result)?,
        }))
    }

    fn write_json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let p = self.out(name)?;
        std::fs::write(&p, serde_json::to_string_pretty(&self.envelope(result)?)? + "\n")?;
        Ok(p)
    }

    /// A CSV file whose first line is the provenance comment.
    fn csv_writer(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let p = self.out(name)?;
        Ok((p.clone(), BufWriter::new(File::create(p)?)))
    }

    fn load_rows(&self) -> Result<Vec<Transaction>, CliError> {
        let p = self.cfg.out.join(TRANSACTIONS_BIN);
        if !p.exists() {
            return Err(CliError {
                kind: "missing_input",
                stage: None,
                message: format!("{} not found; run `floodmem ingest` first", p.display()),
            });
        }
        Ok(ingest::read_binary_cache(&p)?)
    }

    fn save_rows(&self, rows: &[Transaction]) -> Result<Vec<PathBuf>, CliError> {
        let bin = self.out(TRANSACTIONS_BIN)?;
        ingest::write_binary_cache(&bin, rows, Some(&self.header()))?;
        let csv = self.out(TRANSACTIONS_CSV)?;
        let opts = CsvOptions {
            comment: Some(self.header()),
            ..self.csv_opts()?
        };
        ingest::write_transactions_csv(&csv, rows, &opts)?;
        Ok(vec![bin, csv])
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions::default()
    }

    fn event(&self, file: Option<&Path>) -> Result<EventConfig, CliError> {
        match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
            }
            None => self
                .cfg
                .event
                .clone()
                .ok_or_else(|| CliError::config("no event configured; pass --event or set `event` in the config")),
        }
    }
}

fn report(summary: Value) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn paths(ps: &[PathBuf]) -> Vec<String> {
    ps.iter().map(|p| p.display().to_string()).collect()
}

fn layer(p: &Path, kind: LayerKind) -> Result<IndexedLayer, CliError> {
    Ok(IndexedLayer::new(PolygonLayer::read_geojson(p, kind)?)?)
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let i = &ctx.cfg.inputs;
    let opts = ctx.csv_opts()?;
    let contracts = ingest::read_contracts_csv(require(&i.contracts, "contracts")?, &opts)?;
    let units = ingest::read_cadaster_csv(require(&i.cadaster, "cadaster")?, &opts)?;
    let (rows, mut rejected) = ingest::merge_contract_cadaster(&contracts, &units);
    let (rows, filtered) = ingest::filter_transactions(rows, &FilterPolicy::default());
    rejected.merge(filtered);
    let mut written = ctx.save_rows(&rows)?;
    written.push(ctx.write_json("rejections.json", &rejected)?);
    report(json!({
        "contracts": contracts.len(),
        "kept": rows.len(),
        "rejected": rejected.total(),
        "written": paths(&written),
    }))
}

pub fn tag(ctx: &Context) -> Result<(), CliError> {
    let i = &ctx.cfg.inputs;
    let mut rows = ctx.load_rows()?;
    let opt = |p: &Option<PathBuf>| p.as_deref().map(|p| layer(p, LayerKind::Admin)).transpose();
    let admin = AdminLayers {
        municipality: layer(require(&i.municipalities, "municipalities")?, LayerKind::Admin)?,
        omi_zone: opt(&i.omi_zones)?,
        census_tract: opt(&i.census_tracts)?,
        province: opt(&i.provinces)?,
        region: opt(&i.regions)?,
    };
    let risk = layer(require(&i.risk, "risk")?, LayerKind::Risk)?;
    geo::tag_transactions(&mut rows, &risk, &admin)?;
    let mut hit = BTreeMap::new();
    if let (Some(p), Some(ev)) = (&i.flood_extent, &ctx.cfg.event) {
        let extent = PolygonLayer::read_geojson(p, LayerKind::FloodExtent)?;
        let classes = geo::classify_hit(&rows, &extent, &admin.municipality, &ev.code)?;
        geo::attach_hit_classes(&mut rows, &classes);
        for c in &classes {
            *hit.entry(format!("{:?}", c.class)).or_insert(0usize) += 1;
        }
    }
    let at_risk = rows.iter().filter(|t| t.risk_flag()).count();
    let written = ctx.save_rows(&rows)?;
    report(json!({
        "rows": rows.len(),
        "at_risk": at_risk,
        "hit_classes": hit,
        "written": paths(&written),
    }))
}

pub fn awareness(ctx: &Context) -> Result<(), CliError> {
    let i = &ctx.cfg.inputs;
    let mut rows = ctx.load_rows()?;
    let text = std::fs::read(require(&i.events, "events")?)?;
    let history = EventHistory::read_csv(text.as_slice())?;
    let unknown = attach_awareness(&mut rows, &history, ctx.tau)?;
    let mut written = ctx.save_rows(&rows)?;
    if let (Some(from), Some(to)) = (
        rows.iter().map(|t| t.issuance_date).min(),
        rows.iter().map(|t| t.issuance_date).max(),
    ) {
        let (p, w) = ctx.csv_writer("awareness_series.csv")?;
        write_series_csv(w, &history, from, to, 1, ctx.tau, Some(&ctx.header()))?;
        written.push(p);
    }
    report(json!({
        "rows": rows.len(),
        "rows_without_events": unknown,
        "tau_days": ctx.tau.in_days(),
        "written": paths(&written),
    }))
}

fn spec_by_name(ctx: &Context, name: &str) -> Result<ModelSpec, CliError> {
    design_by_name(name, ctx.fe).map_err(|e| CliError::usage(e.to_string()))
}

pub fn fit(ctx: &Context, design: &str) -> Result<(), CliError> {
    let spec = spec_by_name(ctx, design)?;
    let data = Dataset::new(ctx.load_rows()?);
    let fit = floodmem::designs::fit(&spec, &data, &ctx.solver())?;
    let p = ctx.write_json(&format!("fit_{design}.json"), &json!({ "spec": spec, "fit": fit }))?;
    report(json!({
        "design": design,
        "n_obs": fit.n_obs,
        "n_clusters": fit.n_clusters,
        "coefficients": fit.coefficients,
        "written": paths(&[p]),
    }))
}

fn event_spec(ctx: &Context, ev: &EventConfig, rows: &[Transaction]) -> Result<ModelSpec, CliError> {
    let first = rows.iter().map(|t| t.issuance_date).min();
    let last = rows.iter().map(|t| t.issuance_date).max();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(CliError::config("no transactions"));
    };
    let bins = TemporalBins::new(ev.date, first, last)?;
    let fe = if ctx.fe == FeLevel::Municipality {
        log::warn!("municipality effects absorb the near-miss definition; using OMI zones");
        FeLevel::OmiZone
    } else {
        ctx.fe
    };
    Ok(build_diff_in_diff(bins, ev.regions.clone(), fe)?)
}

#[derive(Serialize)]
struct EventRow {
    group: &'static str,
    bin: String,
    estimate: Option<f64>,
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    p: Option<f64>,
    stars: String,
    status: &'static str,
}

fn event_table(spec: &ModelSpec, fit: &FitResult) -> Vec<EventRow> {
    let labels = spec.event_bins.as_ref().map(TemporalBins::labels).unwrap_or_default();
    let mut out = Vec::new();
    for group in ["hit_risk", "no_hit_risk"] {
        for bin in &labels {
            let row = if bin == REFERENCE_BIN {
                EventRow {
                    group,
                    bin: bin.clone(),
                    estimate: Some(0.0),
                    se: None,
                    ci_low: None,
                    ci_high: None,
                    p: None,
                    stars: String::new(),
                    status: "reference",
                }
            } else {
                match fit.coefficient(&format!("{group}:bin={bin}")) {
                    Some(c) => {
                        let ci = fit.interval(c, 0.95).ok();
                        EventRow {
                        group,
                        bin: bin.clone(),
                        estimate: Some(c.estimate),
                        se: Some(c.se),
                        ci_low: ci.map(|x| x.0),
                        ci_high: ci.map(|x| x.1),
                        p: Some(c.p),
                        stars: c.stars.clone(),
                        status: "ok",
                        }
                    }
                    None => EventRow {
                        group,
                        bin: bin.clone(),
                        estimate: None,
                        se: None,
                        ci_low: None,
                        ci_high: None,
                        p: None,
                        stars: String::new(),
                        status: "dropped",
                    },
                }
            };
            out.push(row);
        }
    }
    out
}

pub fn diffindiff(ctx: &Context, event: Option<&Path>) -> Result<(), CliError> {
    let ev = ctx.event(event)?;
    let rows = ctx.load_rows()?;
    if rows.iter().any(|t| t.hit_class.is_none()) {
        return Err(floodmem::Error::MissingColumns("hit_class".into()).at("sample").into());
    }
    let spec = event_spec(ctx, &ev, &rows)?;
    let data = Dataset::new(rows);
    let fit = floodmem::designs::fit(&spec, &data, &ctx.solver())?;
    let table = event_table(&spec, &fit);
    let (csv_path, mut w) = ctx.csv_writer("event_study.csv")?;
    writeln!(w, "# {}", ctx.header())?;
    writeln!(w, "group,bin,estimate,se,ci_low,ci_high,p,stars,status")?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &table {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.group,
            r.bin,
            f(r.estimate),
            f(r.se),
            f(r.ci_low),
            f(r.ci_high),
            f(r.p),
            r.stars,
            r.status
        )?;
    }
    w.flush()?;
    let json_path = ctx.write_json("diffindiff.json", &json!({ "event": ev, "spec": spec, "fit": fit, "table": table }))?;
    report(json!({
        "event": ev.code,
        "n_obs": fit.n_obs,
        "n_clusters": fit.n_clusters,
        "written": paths(&[json_path, csv_path]),
    }))
}

pub fn sweep(ctx: &Context, design: Option<&str>) -> Result<(), CliError> {
    let name = design.unwrap_or(&ctx.cfg.design);
    let rows = ctx.load_rows()?;
    let (spec, grid) = if name == "diffindiff" {
        let ev = ctx.event(None)?;
        (event_spec(ctx, &ev, &rows)?, SweepGrid::diff_in_diff())
    } else {
        (spec_by_name(ctx, name)?, SweepGrid::full())
    };
    let data = Dataset::new(rows);
    let result = run_sweep(&grid, &spec, &data, &ctx.solver());
    let (p, mut w) = ctx.csv_writer(&format!("sweep_{name}.csv"))?;
    result.write_csv(&mut w, Some(&ctx.header()))?;
    w.flush()?;
    let failed = result.runs.iter().filter(|r| r.fit.is_err()).count();
    report(json!({
        "design": name,
        "configurations": result.len(),
        "failed": failed,
        "written": paths(&[p]),
    }))
}

pub fn diagnose(ctx: &Context, design: Option<&str>) -> Result<(), CliError> {
    let name = design.unwrap_or(&ctx.cfg.design);
    let spec = spec_by_name(ctx, name)?;
    let data = Dataset::new(ctx.load_rows()?);
    let idx = sample_for(&spec, &data)?;
    let m = floodmem::designs::build_design(&spec, &data, &idx).map_err(|e| e.at("build_columns"))?;
    let fit = estimate(&m, &ctx.solver())?;
    let units: Vec<&str> = idx
        .iter()
        .map(|&i| data.rows[i].municipality_id.as_deref().unwrap_or(ingest::UNASSIGNED))
        .collect();
    let values = aggregate_residuals_by_unit(&fit.residuals, &units).map_err(|e| e.at("aggregate"))?;
    let muni = PolygonLayer::read_geojson(require(&ctx.cfg.inputs.municipalities, "municipalities")?, LayerKind::Admin)?;
    let w = queen_contiguity(&muni).map_err(|e| e.at("contiguity"))?;
    let perms = ctx.cfg.permutations;
    let moran_normal = global_morans_i(&values, &w, MoranMethod::NormalApprox).map_err(|e| e.at("moran"))?;
    let moran_permutation = global_morans_i(
        &values,
        &w,
        MoranMethod::Permutation {
            n_perm: perms,
            seed: ctx.cfg.seed,
        },
    )
    .map_err(|e| e.at("moran"))?;
    let lisa = lisa(&values, &w, perms, 0.05, ctx.cfg.seed).map_err(|e| e.at("lisa"))?;

    let mut balance = Vec::new();
    if let Some(ev) = &ctx.cfg.event {
        let in_sample = |t: &&Transaction| {
            t.hit_class != Some(HitClass::HitNoRisk)
                && (ev.regions.is_empty() || t.region_id.as_ref().is_some_and(|r| ev.regions.contains(r)))
        };
        let start = ev.date.checked_sub_months(Months::new(12)).unwrap_or(ev.date);
        let end = ev.date.checked_add_months(Months::new(12)).unwrap_or(ev.date);
        let pre: Vec<&Transaction> = data
            .rows
            .iter()
            .filter(in_sample)
            .filter(|t| t.issuance_date >= start && t.issuance_date < ev.date)
            .collect();
        let post: Vec<&Transaction> = data
            .rows
            .iter()
            .filter(in_sample)
            .filter(|t| t.issuance_date >= ev.date && t.issuance_date < end)
            .collect();
        if pre.is_empty() || post.is_empty() {
            log::warn!("no sales on one side of {}; balance tests skipped", ev.date);
        } else {
            balance = balance_tests(&pre, &post, &BalanceVariable::default_manifest()).map_err(|e| e.at("balance"))?;
        }
    }

    let report_data = DiagnosticsReport {
        moran_normal,
        moran_permutation,
        lisa,
        balance,
    };
    let json_path = ctx.write_json("diagnostics.json", &report_data)?;
    let (lisa_path, mut lw) = ctx.csv_writer("lisa.csv")?;
    report_data.lisa.write_csv(&mut lw, Some(&ctx.header()))?;
    lw.flush()?;
    let (w_path, mut ww) = ctx.csv_writer("weights.csv")?;
    w.write_triplets(&mut ww, Some(&ctx.header()))?;
    ww.flush()?;
    report(json!({
        "design": name,
        "units": values.len(),
        "moran_i": report_data.moran_normal.i,
        "moran_p_normal": report_data.moran_normal.p_value,
        "moran_p_permutation": report_data.moran_permutation.p_value,
        "balance_rows": report_data.balance.len(),
        "written": paths(&[json_path, lisa_path, w_path]),
    }))
}

pub fn synth(ctx: &Context) -> Result<(), CliError> {
    let mut dgp: DgpConfig = ctx.cfg.synth.clone().unwrap_or_default();
    dgp.seed = ctx.cfg.seed;
    dgp.tau = ctx.tau;
    let bundle = synth::generate(&dgp)?;
    let dir = ctx.cfg.out.clone();
    let mut written = bundle.write(&dir, Some(&ctx.header()))?;

    use synth::files;
    let has_extent = bundle.layers.flood_extent.is_some();
    let event = match (&dgp.focal_event, &bundle.truth.focal_event_code) {
        (Some(f), Some(code)) => Some(EventConfig {
            code: code.clone(),
            date: f.date,
            regions: vec![synth::region_id(f.region)],
        }),
        _ => None,
    };
    if let Some(ev) = &event {
        let p = dir.join("event.json");
        std::fs::write(&p, serde_json::to_string_pretty(ev)? + "\n")?;
        written.push(p);
    }
    let run = RunConfig {
        inputs: Inputs {
            contracts: Some(files::CONTRACTS.into()),
            cadaster: Some(files::CADASTER.into()),
            municipalities: Some(files::MUNICIPALITIES.into()),
            omi_zones: Some(files::OMI_ZONES.into()),
            census_tracts: Some(files::CENSUS_TRACTS.into()),
            risk: Some(files::RISK.into()),
            flood_extent: has_extent.then(|| files::FLOOD_EXTENT.into()),
            events: Some(files::EVENTS.into()),
            ..ctx.cfg.inputs.clone()
        },
        event,
        out: ".".into(),
        synth: None,
        ..ctx.cfg.clone()
    };
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(&run)? + "\n")?;
    written.push(p);
    report(json!({
        "seed": dgp.seed,
        "purchases": bundle.truth.n_purchases,
        "focal_event": bundle.truth.focal_event_code,
        "beta_risk": dgp.coefficients.beta_risk,
        "written": paths(&written),
    }))
}
