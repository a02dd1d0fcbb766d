//! Day-resolution calendar helpers.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DateRangeError {
    #[error("range start {start} is after end {end}")]
    Reversed { start: NaiveDate, end: NaiveDate },
    #[error("cannot parse date range {0:?}; expected START..END with ISO-8601 dates")]
    Syntax(String),
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawRange")]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Deserialize)]
struct RawRange {
    start: NaiveDate,
    end: NaiveDate,
}

impl TryFrom<RawRange> for DateRange {
    type Error = DateRangeError;

    fn try_from(raw: RawRange) -> Result<Self, Self::Error> {
        DateRange::new(raw.start, raw.end)
    }
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, DateRangeError> {
        if start > end {
            return Err(DateRangeError::Reversed { start, end });
        }
        Ok(Self { start, end })
    }

    /// The whole calendar year `year`.
    pub fn calendar_year(year: i32) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }

    /// Number of days in the range, both ends included.
    pub fn day_count(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn intersects(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start;
        (0..self.day_count() as u64).map(move |i| start + chrono::Days::new(i))
    }

    /// Splits the range at calendar-year boundaries.
    pub fn split_by_year(&self) -> Vec<DateRange> {
        (self.start.year()..=self.end.year())
            .map(|year| {
                let whole = DateRange::calendar_year(year);
                DateRange {
                    start: whole.start.max(self.start),
                    end: whole.end.min(self.end),
                }
            })
            .collect()
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for DateRange {
    type Err = DateRangeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (start, end) = s
            .split_once("..")
            .ok_or_else(|| DateRangeError::Syntax(s.to_string()))?;
        let parse = |part: &str| {
            NaiveDate::parse_from_str(part.trim(), "%Y-%m-%d").map_err(|_| DateRangeError::Syntax(s.to_string()))
        };
        DateRange::new(parse(start)?, parse(end)?)
    }
}

/// Adds whole calendar months; the day is clamped to the length of the
/// target month (2015-01-31 + 1 month = 2015-02-28).
pub fn add_months(date: NaiveDate, months: u32) -> NaiveDate {
    date.checked_add_months(Months::new(months))
        .expect("date arithmetic stays within chrono's range")
}

/// `date + days`, for non-negative offsets.
pub fn add_days(date: NaiveDate, days: u64) -> NaiveDate {
    date + chrono::Days::new(days)
}
