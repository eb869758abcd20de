use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REFERENCE_BIN: &str = "pre 1y";

/// Event-time bins around one flood: yearly before, quarterly from the
/// event day on. Every bin is half-open `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalBins {
    pub event_date: NaiveDate,
    pub sample_start: NaiveDate,
    pub sample_end: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bin {
    /// `Pre(n)` covers the n-th year before the event.
    Pre(u32),
    /// `Post(q)` covers months `[3q, 3q + 3)` after the event.
    Post(u32),
}

impl Bin {
    pub fn label(self) -> String {
        match self {
            Bin::Pre(n) => format!("pre {n}y"),
            Bin::Post(q) => format!("post {}-{}m", 3 * q, 3 * q + 3),
        }
    }

    fn chronological_key(self) -> i64 {
        match self {
            Bin::Pre(n) => -i64::from(n),
            Bin::Post(q) => i64::from(q),
        }
    }
}

impl TemporalBins {
    pub fn new(event_date: NaiveDate, sample_start: NaiveDate, sample_end: NaiveDate) -> Result<Self> {
        if sample_start > sample_end {
            return Err(Error::invalid("sample start after sample end"));
        }
        if event_date <= sample_start || event_date > sample_end {
            return Err(Error::invalid(format!(
                "event {event_date} must fall inside ({sample_start}, {sample_end}]"
            )));
        }
        Ok(TemporalBins {
            event_date,
            sample_start,
            sample_end,
        })
    }

    pub fn bin_of(&self, d: NaiveDate) -> Bin {
        let e = self.event_date;
        if d >= e {
            let mut q = 0u32;
            while d >= e + Months::new(3 * (q + 1)) {
                q += 1;
            }
            Bin::Post(q)
        } else {
            let mut n = 1u32;
            while d < e - Months::new(12 * n) {
                n += 1;
            }
            Bin::Pre(n)
        }
    }

    pub fn label_of(&self, d: NaiveDate) -> String {
        self.bin_of(d).label()
    }

    /// All bins touched by the sample period, oldest first.
    pub fn bins(&self) -> Vec<Bin> {
        let first = self.bin_of(self.sample_start);
        let last = self.bin_of(self.sample_end);
        let mut out = Vec::new();
        if let Bin::Pre(n) = first {
            out.extend((1..=n).rev().map(Bin::Pre));
        }
        if let Bin::Post(q) = last {
            out.extend((0..=q).map(Bin::Post));
        }
        out.sort_by_key(|b| b.chronological_key());
        out
    }

    pub fn labels(&self) -> Vec<String> {
        self.bins().into_iter().map(Bin::label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn bins() -> TemporalBins {
        TemporalBins::new(day(2023, 5, 16), day(2016, 1, 1), day(2024, 8, 31)).unwrap()
    }

    #[test]
    fn examples() {
        let b = bins();
        assert_eq!(b.label_of(day(2023, 7, 16)), "post 0-3m");
        assert_eq!(b.label_of(day(2022, 3, 16)), "pre 2y");
        assert_eq!(b.label_of(day(2023, 5, 16)), "post 0-3m");
        assert_eq!(b.label_of(day(2023, 5, 15)), "pre 1y");
        assert_eq!(b.label_of(day(2023, 8, 16)), "post 3-6m");
        assert_eq!(b.label_of(day(2022, 5, 16)), "pre 1y");
        assert_eq!(b.label_of(day(2022, 5, 15)), "pre 2y");
    }

    #[test]
    fn bins_partition_sample() {
        let b = bins();
        let labels = b.labels();
        assert_eq!(labels.first().unwrap(), "pre 8y");
        assert_eq!(labels.last().unwrap(), "post 15-18m");
        let mut d = b.sample_start;
        while d <= b.sample_end {
            assert_eq!(labels.iter().filter(|l| **l == b.label_of(d)).count(), 1);
            d = d.succ_opt().unwrap();
        }
    }

    #[test]
    fn event_outside_sample_rejected() {
        assert!(TemporalBins::new(day(2030, 1, 1), day(2016, 1, 1), day(2024, 8, 31)).is_err());
    }
}
