use std::fmt;
use std::io::{BufRead, Write};

use iopscope_core::calendar::DateRange;
use iopscope_core::detect::{detect_throwins, Detection};
use iopscope_core::export::{
    read_detections, read_report, render_markdown, write_atomic, write_detections, write_report, write_spectrogram,
};
use iopscope_core::ingest::{fetch_series, DirectorySource, FetchPolicy, FillPolicy, TimeSeries};
use iopscope_core::kb::{save_kb, KnowledgeBase, NodeId};
use iopscope_core::review::{ReviewQueue, ReviewStatus};
use iopscope_core::scoring::{
    build_report, default_factor, impact_timeline, report_from_scores, AchievementReport, PeriodScore,
};
use iopscope_core::wavelet::{cwt, default_scales, MotherWavelet, Spectrogram};
use iopscope_service::AppState;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{check_periods, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    /// (component, days) per written series.
    pub series: Vec<(u32, usize)>,
    pub period: DateRange,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ingested {} series over {}", self.series.len(), self.period)?;
        for (id, days) in &self.series {
            writeln!(f, "  c{id}: {days} days")?;
        }
        Ok(())
    }
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary, CliError> {
    let manifest = cfg
        .load_manifest()?
        .ok_or_else(|| CliError::config("--manifest is required"))?;
    if let Some(kb) = cfg.load_kb_if_given()? {
        manifest.resolve_against(&kb)?;
    }
    let source = DirectorySource::new(cfg.series_dir()?);
    let policy = FetchPolicy::default();
    let ws = cfg.workspace();
    let mut series = Vec::new();
    for entry in &manifest.entries {
        let s = fetch_series(&source, entry, manifest.period, FillPolicy::Zero, &policy)
            .map_err(|e| CliError::from(e).context(format!("manifest entry {}", entry.component_id)))?;
        ws.write_series(&s)?;
        log::info!("{entry}: {} days", s.len());
        series.push((entry.component_id, s.len()));
    }
    Ok(IngestSummary {
        series,
        period: manifest.period,
    })
}

/// Components to analyse: the manifest entries, else every ingested series.
fn component_ids(cfg: &RunConfig) -> Result<Vec<u32>, CliError> {
    if let Some(m) = cfg.load_manifest()? {
        return Ok(m.entries.iter().map(|e| e.component_id).collect());
    }
    let dir = cfg.workspace().series_dir();
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut ids: Vec<u32> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix('c')?.strip_suffix(".csv")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(CliError::input(format!("no ingested series in {}", dir.display())));
    }
    Ok(ids)
}

struct Cell {
    period: DateRange,
    component: u32,
    morlet: Spectrogram,
    mexhat: Spectrogram,
    detections: Vec<Detection>,
}

fn analyze_cell(series: &TimeSeries, period: DateRange, cfg: &RunConfig) -> Result<Cell, CliError> {
    let slice = series.slice(period).ok_or_else(|| {
        CliError::input(format!(
            "series c{} ({}) does not cover {period}",
            series.component_id,
            series.span()
        ))
    })?;
    let scales = default_scales(slice.len())?;
    let morlet = cwt(&slice, &MotherWavelet::morlet(cfg.omega0)?, &scales)?;
    let mexhat = cwt(&slice, &MotherWavelet::MexicanHat, &scales)?;
    let detections = detect_throwins(&morlet, &mexhat, &cfg.detection)?;
    Ok(Cell {
        period,
        component: series.component_id,
        morlet,
        mexhat,
        detections,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub cells: usize,
    pub periods: Vec<DateRange>,
    pub detections: Vec<Detection>,
}

impl fmt::Display for AnalyzeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "analysed {} cells over {} periods; {} detections",
            self.cells,
            self.periods.len(),
            self.detections.len()
        )?;
        for d in &self.detections {
            writeln!(
                f,
                "  c{} onset {} for {} days (scale {:.2}, z {:.1})",
                d.component_id, d.onset, d.duration_days, d.peak_scale, d.intensity
            )?;
        }
        Ok(())
    }
}

/// Transforms and detections per component and period. Cells are computed
/// on the worker pool; every file is written from the calling thread.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeSummary, CliError> {
    let periods = cfg.periods()?;
    check_periods(&periods)?;
    let ids = component_ids(cfg)?;
    let ws = cfg.workspace();
    let series = ids
        .iter()
        .map(|&id| ws.read_series(id).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(DateRange, &TimeSeries)> = periods
        .iter()
        .flat_map(|&p| series.iter().map(move |s| (p, s)))
        .collect();
    let total = jobs.len();
    let cells = jobs
        .par_iter()
        .map(|&(p, s)| analyze_cell(s, p, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let root = ws.analysis_root();
    if root.exists() {
        std::fs::remove_dir_all(&root).map_err(|e| CliError::input(format!("{}: {e}", root.display())))?;
    }
    let mut detections = Vec::new();
    for (i, cell) in cells.into_iter().enumerate() {
        log::info!(
            "cell {}/{total}: component {} period {}: {} detections",
            i + 1,
            cell.component,
            cell.period,
            cell.detections.len()
        );
        let dir = ws.analysis_dir(&cell.period);
        write_spectrogram(&dir, &cell.morlet)?;
        write_spectrogram(&dir, &cell.mexhat)?;
        detections.extend(cell.detections);
    }
    detections.sort_by(|a, b| a.onset.cmp(&b.onset).then(a.component_id.cmp(&b.component_id)));
    write_detections(&ws.detections_path(), &detections)?;
    Ok(AnalyzeSummary {
        cells: total,
        periods,
        detections,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotateSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub pending: usize,
    pub kb_changed: bool,
    /// Project count after the update.
    pub projects: usize,
}

impl fmt::Display for AnnotateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accepted {}, rejected {}, left pending {}; knowledge base {} ({} projects)",
            self.accepted,
            self.rejected,
            self.pending,
            if self.kb_changed { "updated" } else { "unchanged" },
            self.projects
        )
    }
}

enum Answer {
    Accept(Option<u32>),
    Reject,
    Skip,
    Quit,
}

fn ask<R: BufRead, W: Write>(input: &mut R, output: &mut W, question: &str) -> Result<Answer, CliError> {
    let io = |e: std::io::Error| CliError::input(format!("terminal: {e}"));
    loop {
        write!(output, "{question} [y]es / [n]o / [s]kip / [q]uit / <months>: ").map_err(io)?;
        output.flush().map_err(io)?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(io)? == 0 {
            return Ok(Answer::Quit);
        }
        let answer = line.trim().to_ascii_lowercase();
        match answer.as_str() {
            "y" | "yes" | "" => return Ok(Answer::Accept(None)),
            "n" | "no" => return Ok(Answer::Reject),
            "s" | "skip" => return Ok(Answer::Skip),
            "q" | "quit" => return Ok(Answer::Quit),
            other => match other.parse::<u32>() {
                Ok(m) => return Ok(Answer::Accept(Some(m))),
                Err(_) => writeln!(output, "unrecognised answer {other:?}").map_err(io)?,
            },
        }
    }
}

fn describe(kb: &KnowledgeBase, d: &Detection, delay: Option<u32>) -> String {
    let name = kb
        .nodes
        .get(&d.component_id)
        .map_or("unknown component", |n| n.formulation.as_str());
    let wavelets: Vec<&str> = d.wavelets_agreeing.iter().map(|w| w.as_str()).collect();
    let delay = delay.map_or_else(|| "no default delay".to_string(), |m| format!("delay {m} months"));
    format!(
        "c{} {name}: onset {}, {} days, scale {:.2}, z {:.1}, {}; {delay}.",
        d.component_id,
        d.onset,
        d.duration_days,
        d.peak_scale,
        d.intensity,
        wavelets.join("+")
    )
}

/// Applies the review queue to the knowledge base. Without a terminal every
/// pending detection is accepted with its table delay.
pub fn annotate_with<R: BufRead, W: Write>(
    cfg: &RunConfig,
    mut terminal: Option<(&mut R, &mut W)>,
) -> Result<AnnotateSummary, CliError> {
    let kb_path = cfg.kb_path()?;
    let original = cfg.load_kb()?;
    let ws = cfg.workspace();
    let detections = read_detections(&ws.detections_path())?;
    let delays = cfg.load_delays()?;
    let stored = match ReviewQueue::load(&ws.review_path()) {
        Ok(q) => q,
        Err(e) if e.is_not_found() => ReviewQueue::default(),
        Err(e) => return Err(e.into()),
    };
    let mut queue = stored.sync(&detections, &delays);

    let mut kb = original.clone();
    let (mut accepted, mut rejected) = (0, 0);
    for index in 0..queue.items.len() {
        if queue.items[index].status != ReviewStatus::Pending {
            continue;
        }
        let answer = match terminal.as_mut() {
            Some((input, output)) => {
                let item = &queue.items[index];
                let question = describe(&kb, &item.detection, item.default_delay_months);
                ask(*input, *output, &question)?
            }
            None => Answer::Accept(None),
        };
        match answer {
            Answer::Accept(delay) => {
                kb = queue.accept(index, &kb, delay)?;
                accepted += 1;
            }
            Answer::Reject => {
                queue.reject(index)?;
                rejected += 1;
            }
            Answer::Skip => {}
            Answer::Quit => break,
        }
    }

    let kb_changed = kb != original;
    if kb_changed {
        write_atomic(kb_path, save_kb(&kb).as_bytes())?;
    }
    queue.save(&ws.review_path())?;
    let pending = queue.items.iter().filter(|i| i.status == ReviewStatus::Pending).count();
    Ok(AnnotateSummary {
        accepted,
        rejected,
        pending,
        kb_changed,
        projects: kb.projects().count(),
    })
}

pub fn cmd_annotate(cfg: &RunConfig) -> Result<AnnotateSummary, CliError> {
    if cfg.interactive {
        let stdin = std::io::stdin();
        let mut input = stdin.lock();
        let mut output = std::io::stdout();
        annotate_with(cfg, Some((&mut input, &mut output)))
    } else {
        annotate_with::<std::io::Empty, std::io::Sink>(cfg, None)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SheetPeriod {
    start: chrono::NaiveDate,
    end: chrono::NaiveDate,
    achievement: f64,
}

/// Per-period achievement values supplied directly.
///
/// ```toml
/// goal = 0
/// factor = 2.0
///
/// [[periods]]
/// start = "2013-01-01"
/// end = "2013-12-31"
/// achievement = 0.380492
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresSheet {
    #[serde(default)]
    goal: Option<NodeId>,
    #[serde(default)]
    factor: Option<f64>,
    periods: Vec<SheetPeriod>,
}

fn score_from_sheet(
    cfg: &RunConfig,
    path: &std::path::Path,
    kb: Option<&KnowledgeBase>,
) -> Result<AchievementReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let sheet: ScoresSheet = toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let periods = sheet
        .periods
        .iter()
        .map(|p| {
            DateRange::new(p.start, p.end)
                .map(|period| PeriodScore {
                    period,
                    achievement: p.achievement,
                })
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ranges: Vec<DateRange> = periods.iter().map(|p| p.period).collect();
    check_periods(&ranges)?;
    let factor = cfg.factor.or(sheet.factor).unwrap_or_else(|| default_factor(&ranges));
    let goal = cfg.goal.or(sheet.goal).unwrap_or(0);
    let mut report = report_from_scores(goal, periods, factor, cfg.tolerance)?;
    if let Some(kb) = kb {
        report.impact_timeline = impact_timeline(kb);
    }
    Ok(report)
}

/// Scores the goal (or reads injected scores) and writes `report.json` and `report.md`.
pub fn cmd_score(cfg: &RunConfig) -> Result<AchievementReport, CliError> {
    let kb = cfg.load_kb_if_given()?;
    let report = match &cfg.scores {
        Some(path) => score_from_sheet(cfg, path, kb.as_ref())?,
        None => {
            let kb = kb
                .as_ref()
                .ok_or_else(|| CliError::config("--kb or --scores is required"))?;
            let periods = cfg.periods()?;
            check_periods(&periods)?;
            let goal = cfg.goal.unwrap_or(kb.root_id);
            build_report(kb, goal, &periods, cfg.factor, cfg.tolerance)?
        }
    };
    let ws = cfg.workspace();
    write_report(&ws.report_json_path(), &report)?;
    write_atomic(&ws.report_md_path(), render_markdown(&report, kb.as_ref()).as_bytes())?;
    Ok(report)
}

/// Re-renders `report.md` from `report.json` and returns the markdown.
pub fn cmd_report(cfg: &RunConfig) -> Result<String, CliError> {
    let ws = cfg.workspace();
    let report = read_report(&ws.report_json_path())?;
    let kb = cfg.load_kb_if_given()?;
    let md = render_markdown(&report, kb.as_ref());
    write_atomic(&ws.report_md_path(), md.as_bytes())?;
    Ok(md)
}

pub fn cmd_serve(cfg: &RunConfig) -> Result<(), CliError> {
    let delays = cfg.delays.as_deref();
    let state = AppState::open(cfg.kb_path()?, cfg.workspace(), delays)?;
    iopscope_service::run(state, cfg.addr())?;
    Ok(())
}
