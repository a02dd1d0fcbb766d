//! Daily publication-count series per monitored component.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{add_days, DateRange};
use crate::kb::KnowledgeBase;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot parse manifest: {0}")]
    ManifestSyntax(String),
    #[error("empty manifest")]
    EmptyManifest,
    #[error("duplicate component id {0} in manifest")]
    DuplicateComponent(u32),
    #[error("manifest component {0} is not a project in the knowledge base")]
    UnresolvedComponent(u32),
    #[error("empty series file")]
    EmptySeries,
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("negative count {count} on {date}")]
    NegativeCount { date: NaiveDate, count: i64 },
    #[error("duplicate row for {0}")]
    DuplicateDate(NaiveDate),
    #[error("series has a cadence of {0} days or coarser; only daily counts are accepted")]
    CoarseCadence(i64),
    #[error("source returned {date}, outside the requested range {range}")]
    OutOfRange { date: NaiveDate, range: DateRange },
    #[error("fetching component {component}: {source}")]
    Fetch {
        component: u32,
        #[source]
        source: FetchError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Days without a row had no publications.
    #[default]
    Zero,
    /// Days without a row repeat the previous day's count.
    Previous,
}

impl FromStr for FillPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Self::Zero),
            "previous" => Ok(Self::Previous),
            other => Err(format!("unknown fill policy {other:?} (expected zero or previous)")),
        }
    }
}

/// Dense daily counts for one component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub component_id: u32,
    pub start: NaiveDate,
    pub values: Vec<u64>,
    pub label: String,
}

impl TimeSeries {
    pub fn new(component_id: u32, start: NaiveDate, values: Vec<u64>) -> Self {
        Self {
            component_id,
            start,
            values,
            label: format!("c{component_id}"),
        }
    }

    pub fn with_component(mut self, component_id: u32, label: impl Into<String>) -> Self {
        self.component_id = component_id;
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn span(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: add_days(self.start, self.values.len().saturating_sub(1) as u64),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// The part of the series inside `range`, or `None` when they do not overlap.
    pub fn slice(&self, range: DateRange) -> Option<TimeSeries> {
        let span = self.span();
        if !span.intersects(&range) {
            return None;
        }
        let start = range.start.max(span.start);
        let end = range.end.min(span.end);
        let lo = (start - self.start).num_days() as usize;
        let hi = (end - self.start).num_days() as usize;
        Some(TimeSeries {
            component_id: self.component_id,
            start,
            values: self.values[lo..=hi].to_vec(),
            label: self.label.clone(),
        })
    }

    /// `date,count` rendering accepted by [`load_series`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,count\n");
        for (day, v) in self.span().days().zip(&self.values) {
            out.push_str(&format!("{day},{v}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub component_id: u32,
    /// Opaque query text for the monitoring system.
    pub query: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryManifest {
    pub period: DateRange,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl QueryManifest {
    pub fn entry(&self, component_id: u32) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.component_id == component_id)
    }

    /// Checks that every component id names a project of `kb`.
    pub fn resolve_against(&self, kb: &KnowledgeBase) -> Result<(), IngestError> {
        for e in &self.entries {
            match kb.nodes.get(&e.component_id) {
                Some(node) if node.is_project() => {}
                _ => return Err(IngestError::UnresolvedComponent(e.component_id)),
            }
        }
        Ok(())
    }
}

/// Parses a TOML manifest with `period` and `entries` keys.
pub fn load_manifest(document: &str) -> Result<QueryManifest, IngestError> {
    let manifest: QueryManifest = toml::from_str(document).map_err(|e| IngestError::ManifestSyntax(e.to_string()))?;
    if manifest.entries.is_empty() {
        return Err(IngestError::EmptyManifest);
    }
    let mut seen = BTreeSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.component_id) {
            return Err(IngestError::DuplicateComponent(e.component_id));
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &QueryManifest) -> String {
    toml::to_string(manifest).expect("manifest serializes to TOML")
}

fn parse_rows(document: &str) -> Result<Vec<(NaiveDate, i64)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(document.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| IngestError::Row {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(IngestError::Row {
                line,
                message: format!("expected 2 fields (date,count), found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|_| IngestError::Row {
            line,
            message: format!("unparseable date {:?}", &record[0]),
        })?;
        let count: i64 = record[1].parse().map_err(|_| IngestError::Row {
            line,
            message: format!("count {:?} is not an integer", &record[1]),
        })?;
        rows.push((date, count));
    }
    Ok(rows)
}

/// Sorts rows and fills the gaps over `range` (or the rows' own span).
fn densify(rows: &[(NaiveDate, i64)], fill: FillPolicy, range: Option<DateRange>) -> Result<TimeSeries, IngestError> {
    let mut by_day = BTreeMap::new();
    for &(date, count) in rows {
        if count < 0 {
            return Err(IngestError::NegativeCount { date, count });
        }
        if let Some(r) = range {
            if !r.contains(date) {
                return Err(IngestError::OutOfRange { date, range: r });
            }
        }
        if by_day.insert(date, count as u64).is_some() {
            return Err(IngestError::DuplicateDate(date));
        }
    }
    if by_day.len() >= 3 {
        let days: Vec<_> = by_day.keys().collect();
        let min_gap = days.windows(2).map(|w| (*w[1] - *w[0]).num_days()).min().unwrap_or(1);
        if min_gap >= 7 {
            return Err(IngestError::CoarseCadence(min_gap));
        }
    }
    let span = match range {
        Some(r) => r,
        None => {
            let (Some((&start, _)), Some((&end, _))) = (by_day.first_key_value(), by_day.last_key_value()) else {
                return Err(IngestError::EmptySeries);
            };
            DateRange { start, end }
        }
    };
    let mut values = Vec::with_capacity(span.day_count());
    let mut previous = 0;
    for day in span.days() {
        let v = match (by_day.get(&day), fill) {
            (Some(&v), _) => v,
            (None, FillPolicy::Zero) => 0,
            (None, FillPolicy::Previous) => previous,
        };
        previous = v;
        values.push(v);
    }
    Ok(TimeSeries {
        component_id: 0,
        start: span.start,
        values,
        label: String::new(),
    })
}

/// Loads a `date,count` file into a dense daily series over its own span.
pub fn load_series(document: &str, fill: FillPolicy) -> Result<TimeSeries, IngestError> {
    let rows = parse_rows(document)?;
    if rows.is_empty() {
        return Err(IngestError::EmptySeries);
    }
    densify(&rows, fill, None)
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("no series available for query label {0:?}")]
    NotFound(String),
    #[error(transparent)]
    Malformed(Box<IngestError>),
}

impl FetchError {
    fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport { retryable: true, .. })
    }
}

/// Something that can answer a component query with raw daily counts.
pub trait SeriesSource: Send + Sync {
    fn fetch(
        &self,
        entry: &ManifestEntry,
        range: DateRange,
        timeout: Duration,
    ) -> Result<Vec<(NaiveDate, i64)>, FetchError>;
}

#[derive(Debug, Clone)]
pub struct FetchPolicy {
    pub max_attempts: u32,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(200),
        }
    }
}

/// Fetches one component and normalizes it like [`load_series`], densified
/// over `range`. An empty answer yields an all-zero series.
pub fn fetch_series(
    source: &dyn SeriesSource,
    entry: &ManifestEntry,
    range: DateRange,
    fill: FillPolicy,
    policy: &FetchPolicy,
) -> Result<TimeSeries, IngestError> {
    let mut attempt = 0;
    let rows = loop {
        attempt += 1;
        match source.fetch(entry, range, policy.timeout) {
            Ok(rows) => break rows,
            Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                log::warn!(
                    "component {}: attempt {attempt} failed ({e}); retrying",
                    entry.component_id
                );
                std::thread::sleep(policy.backoff);
            }
            Err(FetchError::Malformed(inner)) => return Err(*inner),
            Err(source) => {
                return Err(IngestError::Fetch {
                    component: entry.component_id,
                    source,
                })
            }
        }
    };
    if rows.is_empty() {
        log::warn!(
            "component {}: no rows in {range}; using an all-zero series",
            entry.component_id
        );
    }
    Ok(densify(&rows, fill, Some(range))?.with_component(entry.component_id, entry.label.clone()))
}

/// File-backed stand-in for a monitoring system: the series for a query
/// label lives in `<dir>/<label>.csv`.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    dir: PathBuf,
}

impl DirectorySource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, entry: &ManifestEntry) -> PathBuf {
        self.dir.join(format!("{}.csv", entry.label))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SeriesSource for DirectorySource {
    fn fetch(
        &self,
        entry: &ManifestEntry,
        range: DateRange,
        _timeout: Duration,
    ) -> Result<Vec<(NaiveDate, i64)>, FetchError> {
        let path = self.path_for(entry);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => FetchError::NotFound(entry.label.clone()),
            _ => FetchError::Transport {
                message: format!("{}: {e}", path.display()),
                retryable: false,
            },
        })?;
        let rows = parse_rows(&text).map_err(|e| FetchError::Malformed(Box::new(e)))?;
        Ok(rows.into_iter().filter(|(d, _)| range.contains(*d)).collect())
    }
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "component {} ({})", self.component_id, self.label)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn zero_fill() {
        let s = load_series("date,count\n2015-07-01,5\n2015-07-03,7\n", FillPolicy::Zero).unwrap();
        assert_eq!(s.values, vec![5, 0, 7]);
        assert_eq!(s.start, d("2015-07-01"));
    }

    #[test]
    fn previous_fill() {
        let s = load_series("date,count\n2015-07-01,5\n2015-07-03,7\n", FillPolicy::Previous).unwrap();
        assert_eq!(s.values, vec![5, 5, 7]);
    }

    #[test]
    fn unordered_rows_are_sorted() {
        let s = load_series("date,count\n2015-07-03,7\n2015-07-01,5\n", FillPolicy::Zero).unwrap();
        assert_eq!(s.values, vec![5, 0, 7]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            load_series("date,count\n2015-07-01,-1\n", FillPolicy::Zero),
            Err(IngestError::NegativeCount { .. })
        ));
        assert!(matches!(
            load_series("date,count\n2015-13-01,1\n", FillPolicy::Zero),
            Err(IngestError::Row { line: 2, .. })
        ));
        assert!(matches!(
            load_series("date,count\n", FillPolicy::Zero),
            Err(IngestError::EmptySeries)
        ));
        assert!(matches!(
            load_series("", FillPolicy::Zero),
            Err(IngestError::EmptySeries)
        ));
        assert!(matches!(
            load_series("date,count\n2015-07-01,1\n2015-07-01,2\n", FillPolicy::Zero),
            Err(IngestError::DuplicateDate(_))
        ));
    }

    #[test]
    fn weekly_cadence_is_rejected() {
        let doc = "date,count\n2015-07-01,1\n2015-07-08,2\n2015-07-15,3\n";
        assert!(matches!(
            load_series(doc, FillPolicy::Zero),
            Err(IngestError::CoarseCadence(7))
        ));
    }

    fn manifest_doc(ids: &[u32]) -> String {
        let mut doc = String::from("[period]\nstart = \"2013-01-01\"\nend = \"2019-07-10\"\n");
        for id in ids {
            doc.push_str(&format!(
                "\n[[entries]]\ncomponent_id = {id}\nquery = \"q{id}\"\nlabel = \"c{id}\"\n"
            ));
        }
        doc
    }

    #[test]
    fn manifest_with_fifteen_components() {
        let ids = [5, 6, 8, 9, 10, 11, 12, 13, 14, 18, 20, 23, 24, 25, 26];
        let m = load_manifest(&manifest_doc(&ids)).unwrap();
        assert_eq!(m.entries.len(), 15);
        m.resolve_against(&crate::fixtures::nasu_base()).unwrap();
        m.resolve_against(&crate::fixtures::nasu_2015()).unwrap();
    }

    #[test]
    fn manifest_errors() {
        assert!(matches!(
            load_manifest(&manifest_doc(&[])),
            Err(IngestError::EmptyManifest)
        ));
        assert!(matches!(
            load_manifest(&manifest_doc(&[3, 3])),
            Err(IngestError::DuplicateComponent(3))
        ));
        assert!(matches!(
            load_manifest("period = 3"),
            Err(IngestError::ManifestSyntax(_))
        ));
        let m = load_manifest(&manifest_doc(&[1])).unwrap();
        assert!(matches!(
            m.resolve_against(&crate::fixtures::nasu_base()),
            Err(IngestError::UnresolvedComponent(1))
        ));
    }

    struct Scripted {
        rows: Vec<(NaiveDate, i64)>,
        failures: AtomicU32,
    }

    impl SeriesSource for Scripted {
        fn fetch(&self, _: &ManifestEntry, _: DateRange, _: Duration) -> Result<Vec<(NaiveDate, i64)>, FetchError> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(FetchError::Transport {
                    message: "connection reset".into(),
                    retryable: true,
                });
            }
            Ok(self.rows.clone())
        }
    }

    fn entry() -> ManifestEntry {
        ManifestEntry {
            component_id: 14,
            query: "q".into(),
            label: "understatement".into(),
        }
    }

    fn quick() -> FetchPolicy {
        FetchPolicy {
            backoff: Duration::ZERO,
            ..FetchPolicy::default()
        }
    }

    #[test]
    fn empty_fetch_is_zero_series() {
        let src = Scripted {
            rows: vec![],
            failures: AtomicU32::new(0),
        };
        let range = DateRange::new(d("2015-07-01"), d("2015-07-10")).unwrap();
        let s = fetch_series(&src, &entry(), range, FillPolicy::Zero, &quick()).unwrap();
        assert_eq!(s.values, vec![0; 10]);
        assert_eq!(s.component_id, 14);
    }

    #[test]
    fn out_of_range_row_is_a_contract_violation() {
        let src = Scripted {
            rows: vec![(d("2015-08-01"), 3)],
            failures: AtomicU32::new(0),
        };
        let range = DateRange::new(d("2015-07-01"), d("2015-07-10")).unwrap();
        assert!(matches!(
            fetch_series(&src, &entry(), range, FillPolicy::Zero, &quick()),
            Err(IngestError::OutOfRange { .. })
        ));
    }

    #[test]
    fn transient_failures_are_retried() {
        let range = DateRange::new(d("2015-07-01"), d("2015-07-02")).unwrap();
        let src = Scripted {
            rows: vec![(d("2015-07-02"), 4)],
            failures: AtomicU32::new(2),
        };
        let s = fetch_series(&src, &entry(), range, FillPolicy::Zero, &quick()).unwrap();
        assert_eq!(s.values, vec![0, 4]);

        let src = Scripted {
            rows: vec![],
            failures: AtomicU32::new(5),
        };
        assert!(matches!(
            fetch_series(&src, &entry(), range, FillPolicy::Zero, &quick()),
            Err(IngestError::Fetch { component: 14, .. })
        ));
    }

    #[test]
    fn slicing() {
        let s = load_series(
            "date,count\n2015-07-01,1\n2015-07-02,2\n2015-07-03,3\n",
            FillPolicy::Zero,
        )
        .unwrap();
        let r = DateRange::new(d("2015-07-02"), d("2015-09-01")).unwrap();
        let part = s.slice(r).unwrap();
        assert_eq!(part.values, vec![2, 3]);
        assert_eq!(part.start, d("2015-07-02"));
        assert!(s.slice(DateRange::calendar_year(2014)).is_none());
        assert_eq!(load_series(&s.to_csv(), FillPolicy::Zero).unwrap(), s);
    }
}
