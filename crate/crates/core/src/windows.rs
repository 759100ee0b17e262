//! Observation windows over a dataset span.
//!
//! Four duration classes are supported: consecutive 14-day and 30-day
//! windows from the first day of the span (any trailing remainder that does
//! not fill a whole window is dropped), calendar months clipped to the span,
//! and the full span itself.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::cdr::DatasetSpan;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DurationClass {
    Days14,
    Days30,
    Month,
    Full,
}

impl DurationClass {
    pub const ALL: [DurationClass; 4] = [
        DurationClass::Days14,
        DurationClass::Days30,
        DurationClass::Month,
        DurationClass::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DurationClass::Days14 => "days14",
            DurationClass::Days30 => "days30",
            DurationClass::Month => "month",
            DurationClass::Full => "full",
        }
    }

    fn fixed_len(self) -> Option<u32> {
        match self {
            DurationClass::Days14 => Some(14),
            DurationClass::Days30 => Some(30),
            _ => None,
        }
    }
}

impl fmt::Display for DurationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DurationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "days14" | "14d" => Ok(DurationClass::Days14),
            "days30" | "30d" => Ok(DurationClass::Days30),
            "month" => Ok(DurationClass::Month),
            "full" => Ok(DurationClass::Full),
            other => Err(Error::Window(format!("unknown duration class {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub label: String,
    pub first_day: NaiveDate,
    /// Inclusive.
    pub last_day: NaiveDate,
    pub class: DurationClass,
}

impl ObservationWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.first_day <= date && date <= self.last_day
    }

    /// Same as [`contains`](Self::contains) on a days-from-CE index.
    pub fn contains_day(&self, day: i32) -> bool {
        self.first_day.num_days_from_ce() <= day && day <= self.last_day.num_days_from_ce()
    }

    pub fn day_count(&self) -> u32 {
        (self.last_day - self.first_day).num_days() as u32 + 1
    }

    /// Middle day; for an even number of days the earlier of the two middle days.
    pub fn midpoint(&self) -> NaiveDate {
        self.first_day + Days::new(u64::from((self.day_count() - 1) / 2))
    }
}

pub fn window_contains(window: &ObservationWindow, date: NaiveDate) -> bool {
    window.contains(date)
}

/// Windows of the requested classes, grouped by class in the order
/// days14, days30, month, full and chronological within each class.
pub fn generate_windows(span: DatasetSpan, classes: &[DurationClass]) -> Vec<ObservationWindow> {
    let classes: BTreeSet<DurationClass> = classes.iter().copied().collect();
    let mut out = Vec::new();
    for class in classes {
        match class {
            DurationClass::Days14 | DurationClass::Days30 => {
                let len = class.fixed_len().unwrap();
                let count = span.day_count() / len;
                let prefix = if len == 14 { "14d" } else { "30d" };
                for i in 0..count {
                    let first = span.first_day() + Days::new(u64::from(i * len));
                    out.push(ObservationWindow {
                        label: format!("{prefix}-{:02}", i + 1),
                        first_day: first,
                        last_day: first + Days::new(u64::from(len - 1)),
                        class,
                    });
                }
            }
            DurationClass::Month => {
                let mut first = span.first_day();
                while first <= span.last_day() {
                    let next_month = first
                        .with_day(1)
                        .and_then(|d| d.checked_add_months(chrono::Months::new(1)))
                        .expect("date in range");
                    let last = (next_month - Days::new(1)).min(span.last_day());
                    out.push(ObservationWindow {
                        label: format!("month-{:04}-{:02}", first.year(), first.month()),
                        first_day: first,
                        last_day: last,
                        class,
                    });
                    first = next_month;
                }
            }
            DurationClass::Full => out.push(ObservationWindow {
                label: "full".to_string(),
                first_day: span.first_day(),
                last_day: span.last_day(),
                class,
            }),
        }
    }
    out
}

/// Writes `label,first_day,last_day,class`.
pub fn write_window_table<W: Write>(windows: &[ObservationWindow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["label", "first_day", "last_day", "class"])?;
    for w in windows {
        out.write_record([
            w.label.clone(),
            w.first_day.to_string(),
            w.last_day.to_string(),
            w.class.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<windows>", e))?;
    Ok(())
}

/// Reads a user-supplied window table in the same layout as
/// [`write_window_table`]. Labels must be unique and each window must have
/// first_day <= last_day.
pub fn read_window_table<R: BufRead>(reader: R) -> Result<Vec<ObservationWindow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::Window(format!("expected 4 fields, got {}", row.len())));
        }
        let date = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|e| Error::Window(format!("{s:?}: {e}")))
        };
        let w = ObservationWindow {
            label: row[0].trim().to_string(),
            first_day: date(&row[1])?,
            last_day: date(&row[2])?,
            class: row[3].parse()?,
        };
        if w.first_day > w.last_day {
            return Err(Error::Window(format!("{}: first_day after last_day", w.label)));
        }
        if !seen.insert(w.label.clone()) {
            return Err(Error::Window(format!("duplicate label {}", w.label)));
        }
        out.push(w);
    }
    Ok(out)
}
