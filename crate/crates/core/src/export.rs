//! On-disk artifacts: spectrogram matrices with metadata sidecars, detection
//! lists, and achievement reports in JSON and Markdown.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Detection;
use crate::kb::KnowledgeBase;
use crate::scoring::AchievementReport;
use crate::wavelet::{coi_mask, MotherWavelet, ScaleLadder, Spectrogram, WaveletKind};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl ExportError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl ToString) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, Self::Io { source, .. } if source.kind() == io::ErrorKind::NotFound)
    }
}

/// Replaces `path` by writing a sibling temporary file and renaming it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ExportError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| ExportError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ExportError::io(path, e))
}

fn read(path: &Path) -> Result<String, ExportError> {
    fs::read_to_string(path).map_err(|e| ExportError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialise");
    s.push('\n');
    s
}

/// Sidecar describing a spectrogram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMeta {
    pub component_id: u32,
    pub start: NaiveDate,
    pub days: usize,
    pub wavelet: WaveletKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    pub scales: ScaleLadder,
    pub coi_factor: f64,
}

impl SpectrogramMeta {
    pub fn of(s: &Spectrogram) -> Self {
        Self {
            component_id: s.component_id,
            start: s.start,
            days: s.days(),
            wavelet: s.wavelet.kind(),
            omega0: s.wavelet.omega0(),
            scales: s.scales.clone(),
            coi_factor: s.coi_factor,
        }
    }
}

/// `c{id}.{wavelet}` within an analysis directory.
pub fn spectrogram_stem(component_id: u32, wavelet: WaveletKind) -> String {
    format!("c{component_id}.{}", wavelet.as_str())
}

/// Matrix as CSV: one row per scale, the first column holding the scale and
/// one column per day headed by its date.
pub fn spectrogram_csv(s: &Spectrogram) -> String {
    let mut out = String::from("scale");
    for day in 0..s.days() {
        let date = crate::calendar::add_days(s.start, day as u64);
        write!(out, ",{date}").unwrap();
    }
    out.push('\n');
    for (a, row) in s.scales.scales().iter().zip(&s.coefficients) {
        write!(out, "{a}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_spectrogram(dir: &Path, s: &Spectrogram) -> Result<(), ExportError> {
    let stem = spectrogram_stem(s.component_id, s.wavelet.kind());
    write_atomic(&dir.join(format!("{stem}.csv")), spectrogram_csv(s).as_bytes())?;
    write_atomic(
        &dir.join(format!("{stem}.json")),
        to_json(&SpectrogramMeta::of(s)).as_bytes(),
    )
}

pub fn read_spectrogram(dir: &Path, component_id: u32, wavelet: WaveletKind) -> Result<Spectrogram, ExportError> {
    let stem = spectrogram_stem(component_id, wavelet);
    let meta_path = dir.join(format!("{stem}.json"));
    let meta: SpectrogramMeta =
        serde_json::from_str(&read(&meta_path)?).map_err(|e| ExportError::format(&meta_path, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let text = read(&csv_path)?;
    let mut lines = text.lines();
    lines
        .next()
        .ok_or_else(|| ExportError::format(&csv_path, "empty matrix"))?;
    let mut coefficients = Vec::with_capacity(meta.scales.len());
    for line in lines {
        let row = line
            .split(',')
            .skip(1)
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ExportError::format(&csv_path, e))?;
        if row.len() != meta.days {
            return Err(ExportError::format(
                &csv_path,
                format!("row has {} values, expected {}", row.len(), meta.days),
            ));
        }
        coefficients.push(row);
    }
    if coefficients.len() != meta.scales.len() {
        return Err(ExportError::format(
            &csv_path,
            format!("{} rows for {} scales", coefficients.len(), meta.scales.len()),
        ));
    }
    let wavelet = match meta.wavelet {
        WaveletKind::MexicanHat => MotherWavelet::MexicanHat,
        WaveletKind::Morlet => MotherWavelet::Morlet {
            omega0: meta.omega0.unwrap_or(crate::wavelet::DEFAULT_OMEGA0),
        },
    };
    Ok(Spectrogram {
        component_id: meta.component_id,
        start: meta.start,
        coi_mask: coi_mask(&meta.scales, meta.days, meta.coi_factor),
        wavelet,
        scales: meta.scales,
        coefficients,
        coi_factor: meta.coi_factor,
    })
}

pub fn detections_json(detections: &[Detection]) -> String {
    to_json(&detections)
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<(), ExportError> {
    write_atomic(path, detections_json(detections).as_bytes())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, ExportError> {
    serde_json::from_str(&read(path)?).map_err(|e| ExportError::format(path, e))
}

pub fn write_report(path: &Path, report: &AchievementReport) -> Result<(), ExportError> {
    write_atomic(path, to_json(report).as_bytes())
}

pub fn read_report(path: &Path) -> Result<AchievementReport, ExportError> {
    serde_json::from_str(&read(path)?).map_err(|e| ExportError::format(path, e))
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Narrative report.
pub fn render_markdown(report: &AchievementReport, kb: Option<&KnowledgeBase>) -> String {
    let name = |id: u32| {
        kb.and_then(|kb| kb.nodes.get(&id))
            .map_or_else(|| format!("node {id}"), |n| n.formulation.clone())
    };
    let mut md = String::new();
    writeln!(md, "# Goal achievement report\n").unwrap();
    writeln!(md, "Goal: {} (id {})\n", name(report.goal_id), report.goal_id).unwrap();
    writeln!(md, "| Period | Achievement |\n|---|---|").unwrap();
    for p in &report.periods {
        writeln!(md, "| {} | {} |", p.period, fmt_score(p.achievement)).unwrap();
    }
    md.push('\n');

    match report.retrospective_average {
        Some(avg) => writeln!(md, "Retrospective average: {}", fmt_score(avg)).unwrap(),
        None => writeln!(md, "Retrospective average: none").unwrap(),
    }
    let last = report.periods.last().map(|p| p.achievement).unwrap_or_default();
    writeln!(
        md,
        "Forecast: {} x {} = {}",
        fmt_score(last),
        fmt_factor(report.extrapolation_factor),
        fmt_score(report.forecast)
    )
    .unwrap();
    if let Some(rel) = report.relative_difference {
        writeln!(
            md,
            "Relative difference: {} (tolerance {})",
            pct(rel),
            pct(report.tolerance)
        )
        .unwrap();
    }
    match report.verdict {
        Some(v) => writeln!(md, "Verdict: {v}").unwrap(),
        None => writeln!(md, "Verdict: none").unwrap(),
    }
    for note in &report.notes {
        writeln!(md, "Note: {note}").unwrap();
    }

    if !report.per_goal.is_empty() {
        writeln!(
            md,
            "\n## Goals in the last period\n\n| Id | Goal | Achievement |\n|---|---|---|"
        )
        .unwrap();
        for (id, v) in &report.per_goal {
            writeln!(md, "| {id} | {} | {} |", name(*id), fmt_score(*v)).unwrap();
        }
    }
    if !report.impact_timeline.is_empty() {
        writeln!(
            md,
            "\n## Expected impact\n\n| Project | Impact onset | Impact end |\n|---|---|---|"
        )
        .unwrap();
        for w in &report.impact_timeline {
            writeln!(md, "| {} | {} | {} |", name(w.project_id), w.impact_onset, w.impact_end).unwrap();
        }
    }
    md
}

fn fmt_factor(f: f64) -> String {
    if f.fract() == 0.0 {
        format!("{f}")
    } else {
        format!("{f:.4}")
    }
}

/// Seven decimals, or six when the seventh is zero.
pub fn fmt_score(x: f64) -> String {
    let seven = format!("{x:.7}");
    match seven.strip_suffix('0') {
        Some(six) => six.to_string(),
        None => seven,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TimeSeries;
    use crate::scoring::{report_from_scores, PeriodScore, DEFAULT_TOLERANCE};
    use crate::wavelet::{cwt, default_scales};

    #[test]
    fn spectrogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<u64> = (0..40).map(|i| (i * 7 % 5) as u64).collect();
        let series = TimeSeries::new(9, "2015-01-01".parse().unwrap(), values);
        let scales = default_scales(40).unwrap();
        for w in [MotherWavelet::default(), MotherWavelet::MexicanHat] {
            let s = cwt(&series, &w, &scales).unwrap();
            write_spectrogram(dir.path(), &s).unwrap();
            let back = read_spectrogram(dir.path(), 9, w.kind()).unwrap();
            assert_eq!(back, s);
        }
        let missing = read_spectrogram(dir.path(), 10, WaveletKind::Morlet).unwrap_err();
        assert!(missing.is_not_found());
    }

    #[test]
    fn score_formatting() {
        assert_eq!(fmt_score(0.512007), "0.512007");
        assert_eq!(fmt_score(0.4886508), "0.4886508");
        assert_eq!(fmt_score(0.5), "0.500000");
        assert_eq!(fmt_score(1.0 / 3.0), "0.3333333");
    }

    #[test]
    fn markdown_mentions_verdict() {
        let p = |y, a| PeriodScore {
            period: crate::DateRange::calendar_year(y),
            achievement: a,
        };
        let r = report_from_scores(0, vec![p(2014, 0.5), p(2015, 0.25)], 2.0, DEFAULT_TOLERANCE).unwrap();
        let md = render_markdown(&r, None);
        assert!(md.contains("Verdict: io_likely"), "{md}");
        assert!(md.contains("0.250000 x 2 = 0.500000"), "{md}");
    }
}
