use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use floodmem::awareness::{awareness_from_dates, HalfLife};
use floodmem::designs::{self, build_baseline, Dataset, FeLevel};
use floodmem::diagnostics::{global_morans_i, lisa, MoranMethod};
use floodmem::geo::ContiguityMatrix;
use floodmem::solver::SolverOptions;
use floodmem::synth::{self, DgpConfig};
use serde_json::{json, Value};

const MAX_POINTS: usize = 20_000;

fn date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date `{}`: {e}", s.trim()))
}

pub fn awareness_curve(events: &str, tau_days: u32, start: &str, end: &str, step_days: u32) -> Result<Value, String> {
    let tau = HalfLife::days(tau_days).map_err(|e| e.to_string())?;
    let dates = events
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(date)
        .collect::<Result<Vec<_>, _>>()?;
    let (start, end) = (date(start)?, date(end)?);
    if end < start {
        return Err("end precedes start".into());
    }
    if step_days == 0 {
        return Err("step must be at least one day".into());
    }
    let span = (end - start).num_days() as usize;
    if span / step_days as usize >= MAX_POINTS {
        return Err(format!("more than {MAX_POINTS} points; use a larger step"));
    }
    let mut t = start;
    let (mut days, mut values) = (Vec::new(), Vec::new());
    while t <= end {
        days.push(t.to_string());
        values.push(awareness_from_dates(&dates, t, tau));
        t = t + Days::new(u64::from(step_days));
    }
    Ok(json!({ "tau_days": tau.in_days(), "events": dates.len(), "dates": days, "awareness": values }))
}

fn rook(width: usize, height: usize) -> Result<ContiguityMatrix, String> {
    let mut adj = vec![Vec::new(); width * height];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                adj[i].push(i + 1);
                adj[i + 1].push(i);
            }
            if r + 1 < height {
                adj[i].push(i + width);
                adj[i + width].push(i);
            }
        }
    }
    let ids = (0..width * height).map(|i| format!("c{i:05}")).collect();
    ContiguityMatrix::from_adjacency(ids, &adj).map_err(|e| e.to_string())
}

pub fn moran_grid(values: &[f64], width: usize, n_perm: usize, seed: u64) -> Result<Value, String> {
    if width == 0 || values.len() % width != 0 || values.len() < 4 {
        return Err(format!("{} values do not fill a grid of width {width}", values.len()));
    }
    let w = rook(width, values.len() / width)?;
    let field: BTreeMap<String, f64> = w.ids.iter().cloned().zip(values.iter().copied()).collect();
    let global = global_morans_i(&field, &w, MoranMethod::Permutation { n_perm, seed }).map_err(|e| e.to_string())?;
    let local = lisa(&field, &w, n_perm, 0.05, seed).map_err(|e| e.to_string())?;
    let classes: Vec<String> = local.units.iter().map(|u| format!("{:?}", u.class)).collect();
    let local_i: Vec<Option<f64>> = local.units.iter().map(|u| u.local_i).collect();
    Ok(json!({
        "I": global.i,
        "expected_i": global.expected_i,
        "z": global.z_score,
        "p": global.p_value,
        "classes": classes,
        "local_i": local_i,
    }))
}

pub fn synthetic_fit(seed: u64, n_transactions: usize, beta_risk: f64) -> Result<Value, String> {
    if !(2_000..=60_000).contains(&n_transactions) {
        return Err("transactions must be between 2000 and 60000".into());
    }
    let mut cfg = DgpConfig {
        seed,
        n_regions: 2,
        n_transactions,
        ..DgpConfig::default()
    };
    cfg.coefficients.beta_risk = beta_risk;
    let bundle = synth::generate(&cfg).map_err(|e| e.to_string())?;
    let data = Dataset::new(bundle.transactions(cfg.tau).map_err(|e| e.to_string())?);
    let fit = designs::fit(&build_baseline(FeLevel::OmiZone), &data, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let c = fit.coefficient("risk").ok_or("risk column was dropped")?;
    let (lo, hi) = fit.interval(c, 0.95).map_err(|e| e.to_string())?;
    Ok(json!({
        "beta_true": beta_risk,
        "estimate": c.estimate,
        "se": c.se,
        "ci": [lo, hi],
        "covered": lo <= beta_risk && beta_risk <= hi,
        "n_obs": fit.n_obs,
        "n_clusters": fit.n_clusters,
        "r_squared_within": fit.r_squared_within,
    }))
}
