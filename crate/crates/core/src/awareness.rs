//! Historical-memory flood awareness.
//!
//! Each recorded flood in a region contributes `2^(-(t - d) / tau)` to the
//! awareness on day `t`, where `d` is the first day of the event and `tau` the
//! half-life in days. Events after `t` contribute nothing.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Transaction;
use crate::stats::{tercile_split, TercileSplit};

/// First day of the event record; earlier floods are ignored.
pub fn record_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Emdat,
    Ispra,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloodEventRecord {
    pub region_id: String,
    pub event_start: NaiveDate,
    pub source: EventSource,
}

/// Half-life of awareness in calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HalfLife(u32);

impl HalfLife {
    pub const YEARS_7: HalfLife = HalfLife(2557);
    pub const YEARS_10: HalfLife = HalfLife(3652);
    pub const YEARS_17: HalfLife = HalfLife(6209);

    pub fn days(days: u32) -> Result<Self> {
        if days == 0 {
            return Err(Error::invalid("half-life must be positive"));
        }
        Ok(HalfLife(days))
    }

    /// `"7y"`, `"10y"`, `"17y"` or a plain day count.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "7y" => Ok(Self::YEARS_7),
            "10y" => Ok(Self::YEARS_10),
            "17y" => Ok(Self::YEARS_17),
            other => other
                .strip_suffix('d')
                .unwrap_or(other)
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("unknown half-life `{s}`")))
                .and_then(Self::days),
        }
    }

    pub fn in_days(self) -> u32 {
        self.0
    }
}

impl Default for HalfLife {
    fn default() -> Self {
        Self::YEARS_10
    }
}

/// Flood dates per region, sorted and de-duplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventHistory {
    by_region: BTreeMap<String, Vec<NaiveDate>>,
}

impl EventHistory {
    pub fn new(records: &[FloodEventRecord]) -> Self {
        let mut by_region: BTreeMap<String, Vec<NaiveDate>> = BTreeMap::new();
        let t0 = record_start();
        let mut dropped = 0usize;
        for r in records {
            if r.event_start < t0 {
                dropped += 1;
                continue;
            }
            by_region
                .entry(r.region_id.clone())
                .or_default()
                .push(r.event_start);
        }
        if dropped > 0 {
            log::warn!("{dropped} event(s) before {t0} ignored");
        }
        for dates in by_region.values_mut() {
            dates.sort_unstable();
            dates.dedup();
        }
        EventHistory { by_region }
    }

    /// Declare a region with no recorded floods.
    pub fn with_region(mut self, region: &str) -> Self {
        self.by_region.entry(region.to_string()).or_default();
        self
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.by_region.keys().map(String::as_str)
    }

    pub fn events(&self, region: &str) -> Option<&[NaiveDate]> {
        self.by_region.get(region).map(Vec::as_slice)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let records: Vec<FloodEventRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
        Ok(Self::new(&records))
    }

    pub fn records(&self) -> Vec<FloodEventRecord> {
        self.by_region
            .iter()
            .flat_map(|(r, ds)| {
                ds.iter().map(move |d| FloodEventRecord {
                    region_id: r.clone(),
                    event_start: *d,
                    source: EventSource::Custom,
                })
            })
            .collect()
    }
}

/// Awareness contributed by a set of event dates on day `t`.
pub fn awareness_from_dates(dates: &[NaiveDate], t: NaiveDate, tau: HalfLife) -> f64 {
    let tau = f64::from(tau.0);
    dates
        .iter()
        .filter(|&&d| d <= t)
        .map(|&d| {
            let lag = (t - d).num_days() as f64;
            (-lag / tau).exp2()
        })
        .sum()
}

/// Awareness of `region` on day `t`.
pub fn awareness_at(history: &EventHistory, region: &str, t: NaiveDate, tau: HalfLife) -> Result<f64> {
    if t < record_start() {
        return Err(Error::invalid(format!("date {t} precedes the event record")));
    }
    let dates = history
        .events(region)
        .ok_or_else(|| Error::UnknownRegion(region.to_string()))?;
    Ok(awareness_from_dates(dates, t, tau))
}

/// Set `awareness_at_sale` from the region and issuance date of each home.
///
/// Regions absent from the record get zero awareness. Returns how many rows
/// fell in such regions.
pub fn attach_awareness(rows: &mut [Transaction], history: &EventHistory, tau: HalfLife) -> Result<usize> {
    if rows.iter().any(|t| t.region_id.is_none()) {
        return Err(Error::MissingColumns("region_id".into()));
    }
    let mut unknown = 0usize;
    for t in rows.iter_mut() {
        let region = t.region_id.as_deref().unwrap_or_default();
        let a = match history.events(region) {
            Some(dates) => awareness_from_dates(dates, t.issuance_date, tau),
            None => {
                unknown += 1;
                0.0
            }
        };
        t.awareness_at_sale = Some(a);
    }
    if unknown > 0 {
        log::warn!("{unknown} transaction(s) in regions without recorded floods; awareness set to 0");
    }
    Ok(unknown)
}

/// Sale-time awareness terciles over the whole sample.
pub fn awareness_terciles(rows: &[Transaction]) -> Result<TercileSplit> {
    let values: Vec<f64> = rows
        .iter()
        .map(|t| t.awareness_at_sale)
        .collect::<Option<_>>()
        .ok_or_else(|| Error::MissingColumns("awareness_at_sale".into()))?;
    tercile_split(&values)
}

/// Daily awareness of one region over `[from, to]`, every `step_days`.
pub fn awareness_series(
    history: &EventHistory,
    region: &str,
    from: NaiveDate,
    to: NaiveDate,
    step_days: u32,
    tau: HalfLife,
) -> Result<Vec<(NaiveDate, f64)>> {
    let dates = history
        .events(region)
        .ok_or_else(|| Error::UnknownRegion(region.to_string()))?;
    let step = chrono::Days::new(u64::from(step_days.max(1)));
    let mut out = Vec::new();
    let mut t = from;
    while t <= to {
        out.push((t, awareness_from_dates(dates, t, tau)));
        t = t + step;
    }
    Ok(out)
}

/// `region,date,value` rows for every region in the history.
pub fn write_series_csv<W: Write>(
    mut w: W,
    history: &EventHistory,
    from: NaiveDate,
    to: NaiveDate,
    step_days: u32,
    tau: HalfLife,
    comment: Option<&str>,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "region,date,value")?;
    for region in history.regions() {
        for (d, v) in awareness_series(history, region, from, to, step_days, tau)? {
            writeln!(w, "{region},{d},{v}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn history(dates: &[NaiveDate]) -> EventHistory {
        let recs: Vec<_> = dates
            .iter()
            .map(|&d| FloodEventRecord {
                region_id: "R".into(),
                event_start: d,
                source: EventSource::Custom,
            })
            .collect();
        EventHistory::new(&recs)
    }

    #[test]
    fn event_day_counts_one() {
        let d0 = day(2010, 5, 1);
        let h = history(&[d0]);
        assert_eq!(awareness_at(&h, "R", d0, HalfLife::YEARS_10).unwrap(), 1.0);
        let later = d0 + chrono::Days::new(3652);
        assert_eq!(awareness_at(&h, "R", later, HalfLife::YEARS_10).unwrap(), 0.5);
        let before = d0 - chrono::Days::new(1);
        assert_eq!(awareness_at(&h, "R", before, HalfLife::YEARS_10).unwrap(), 0.0);
    }

    #[test]
    fn presets() {
        assert_eq!(HalfLife::parse("7y").unwrap().in_days(), 2557);
        assert_eq!(HalfLife::parse("10y").unwrap().in_days(), 3652);
        assert_eq!(HalfLife::parse("17y").unwrap().in_days(), 6209);
        assert_eq!(HalfLife::parse("100d").unwrap().in_days(), 100);
        assert!(HalfLife::parse("0").is_err());
        assert!(HalfLife::parse("ten").is_err());
    }

    #[test]
    fn duplicates_and_early_events_collapse() {
        let h = history(&[day(2005, 1, 1), day(2005, 1, 1), day(1999, 6, 1)]);
        assert_eq!(h.events("R").unwrap(), &[day(2005, 1, 1)]);
    }

    #[test]
    fn unknown_region_errors() {
        let h = history(&[day(2005, 1, 1)]);
        assert!(matches!(
            awareness_at(&h, "X", day(2010, 1, 1), HalfLife::YEARS_10),
            Err(Error::UnknownRegion(_))
        ));
        assert!(awareness_at(&h, "R", day(1999, 1, 1), HalfLife::YEARS_10).is_err());
    }

    #[test]
    fn reads_event_csv() {
        let text = "region_id,event_start,source\nER,2019-05-15,emdat\nER,2019-05-15,ispra\nPU,2003-01-23,emdat\n";
        let h = EventHistory::read_csv(text.as_bytes()).unwrap();
        assert_eq!(h.events("ER").unwrap().len(), 1);
        assert_eq!(h.regions().collect::<Vec<_>>(), vec!["ER", "PU"]);
    }

    #[test]
    fn series_csv_shape() {
        let h = history(&[day(2016, 1, 1)]);
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &h, day(2016, 1, 1), day(2016, 1, 3), 1, HalfLife::YEARS_10, None)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("R,2016-01-01,1\n"));
    }
}
