//! Directory layout shared by the pipeline stages and the HTTP service.
//!
//! ```text
//! <root>/series/c{id}.csv
//! <root>/analysis/{start}_{end}/c{id}.{morlet|mexican_hat}.{csv,json}
//! <root>/detections.json
//! <root>/review.json
//! <root>/report.json
//! <root>/report.md
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::calendar::DateRange;
use crate::export::{self, ExportError};
use crate::ingest::{load_series, FillPolicy, TimeSeries};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn series_dir(&self) -> PathBuf {
        self.root.join("series")
    }

    pub fn series_path(&self, component_id: u32) -> PathBuf {
        self.series_dir().join(format!("c{component_id}.csv"))
    }

    pub fn analysis_root(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn analysis_dir(&self, period: &DateRange) -> PathBuf {
        self.analysis_root().join(format!("{}_{}", period.start, period.end))
    }

    pub fn detections_path(&self) -> PathBuf {
        self.root.join("detections.json")
    }

    pub fn review_path(&self) -> PathBuf {
        self.root.join("review.json")
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md_path(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn read_series(&self, component_id: u32) -> Result<TimeSeries, ExportError> {
        let path = self.series_path(component_id);
        let text = fs::read_to_string(&path).map_err(|source| ExportError::Io {
            path: path.clone(),
            source,
        })?;
        let series = load_series(&text, FillPolicy::Zero).map_err(|e| ExportError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(series.with_component(component_id, format!("c{component_id}")))
    }

    pub fn write_series(&self, series: &TimeSeries) -> Result<(), ExportError> {
        export::write_atomic(&self.series_path(series.component_id), series.to_csv().as_bytes())
    }

    /// Periods that have an analysis directory, in date order.
    pub fn analysis_periods(&self) -> Result<Vec<DateRange>, ExportError> {
        let root = self.analysis_root();
        let entries = match fs::read_dir(&root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(ExportError::Io { path: root, source }),
        };
        let mut periods: Vec<DateRange> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let (a, b) = name.split_once('_')?;
                DateRange::new(a.parse().ok()?, b.parse().ok()?).ok()
            })
            .collect();
        periods.sort();
        Ok(periods)
    }
}
