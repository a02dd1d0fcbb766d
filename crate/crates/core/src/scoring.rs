//! Goal achievement per evaluation period, retrospective baseline, forecast
//! and verdict.
//!
//! A goal's achievement is the normalised weighted sum of its children's
//! scores. Projects score their implementation degree for a period only when
//! one of their throw-ins is active in it (projects without any annotation are
//! timeless and always score their degree).

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{add_days, add_months, DateRange};
use crate::kb::{normalize_weights, GoalNode, KbError, KnowledgeBase, NodeId, NodeKind};

pub type EvaluationPeriod = DateRange;

pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("node {0} is a goal, not a project")]
    NotAProject(NodeId),
    #[error("retrospective average needs at least one score")]
    EmptyScores,
    #[error("extrapolation factor must be at least 1, got {0}")]
    FactorBelowOne(f64),
    #[error("retrospective average is zero; relative difference is undefined")]
    ZeroAverage,
    #[error("tolerance must be a non-negative fraction, got {0}")]
    BadTolerance(f64),
    #[error("at least one evaluation period is required")]
    NoPeriods,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    IoLikely,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::IoLikely => "io_likely",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Score of one project for `period`.
pub fn leaf_score(project: &GoalNode, period: &EvaluationPeriod) -> Result<f64, ScoreError> {
    if project.kind != NodeKind::Project {
        return Err(ScoreError::NotAProject(project.id));
    }
    let degree = project.implementation_degree.unwrap_or(0.0);
    if project.annotations.is_empty() {
        return Ok(degree);
    }
    let active = project.annotations.iter().any(|a| a.active_days().intersects(period));
    Ok(if active { degree } else { 0.0 })
}

/// Achievement of every node of the KB for one period.
///
/// Nodes unreachable from the root are scored too; each node is evaluated
/// once.
pub fn score_all(kb: &KnowledgeBase, period: &EvaluationPeriod) -> Result<BTreeMap<NodeId, f64>, ScoreError> {
    let kb = normalize_weights(kb)?;
    let mut memo = BTreeMap::new();
    for &id in kb.nodes.keys() {
        score_node(&kb, id, period, &mut memo)?;
    }
    Ok(memo)
}

fn score_node(
    kb: &KnowledgeBase,
    id: NodeId,
    period: &EvaluationPeriod,
    memo: &mut BTreeMap<NodeId, f64>,
) -> Result<f64, ScoreError> {
    if let Some(&v) = memo.get(&id) {
        return Ok(v);
    }
    let node = kb.node(id)?;
    let value = match node.kind {
        NodeKind::Project => leaf_score(node, period)?,
        NodeKind::Goal => {
            let mut sum = 0.0;
            for child in &node.children {
                sum += child.weight * score_node(kb, child.id, period, memo)?;
            }
            sum
        }
    };
    memo.insert(id, value);
    Ok(value)
}

/// Achievement of `goal_id` (a goal or a project) for `period`.
pub fn goal_achievement(kb: &KnowledgeBase, goal_id: NodeId, period: &EvaluationPeriod) -> Result<f64, ScoreError> {
    kb.node(goal_id)?;
    let kb = normalize_weights(kb)?;
    let mut memo = BTreeMap::new();
    score_node(&kb, goal_id, period, &mut memo)
}

pub fn retrospective_average(scores: &[f64]) -> Result<f64, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptyScores);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Scales a partial-period score up to a full-period forecast, clamped to 1.
pub fn extrapolate(partial_score: f64, factor: f64) -> Result<f64, ScoreError> {
    if !(factor >= 1.0) {
        return Err(ScoreError::FactorBelowOne(factor));
    }
    let raw = partial_score * factor;
    if raw > 1.0 {
        warn!("forecast {raw} exceeds 1 and is clamped");
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// `|average - forecast| / average` and the verdict at `tolerance`.
pub fn compare_and_verdict(forecast: f64, average: f64, tolerance: f64) -> Result<(f64, Verdict), ScoreError> {
    if !(tolerance >= 0.0) {
        return Err(ScoreError::BadTolerance(tolerance));
    }
    if average == 0.0 {
        return Err(ScoreError::ZeroAverage);
    }
    let rel = (average - forecast).abs() / average;
    let verdict = if rel <= tolerance {
        Verdict::IoLikely
    } else {
        Verdict::Inconclusive
    };
    Ok((rel, verdict))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactWindow {
    pub project_id: NodeId,
    pub impact_onset: NaiveDate,
    pub impact_end: NaiveDate,
}

/// When each throw-in is expected to worsen the target indicators.
pub fn impact_timeline(kb: &KnowledgeBase) -> Vec<ImpactWindow> {
    let mut out: Vec<ImpactWindow> = kb
        .projects()
        .flat_map(|p| {
            p.annotations.iter().map(move |a| {
                let impact_onset = add_months(a.onset, a.impact_delay_months);
                ImpactWindow {
                    project_id: p.id,
                    impact_onset,
                    impact_end: add_days(impact_onset, u64::from(a.duration_days.max(1)) - 1),
                }
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.impact_onset
            .cmp(&b.impact_onset)
            .then(a.project_id.cmp(&b.project_id))
    });
    out
}

/// Factor used when none is given: how many times longer the previous period
/// is than the (partial) last one, never below 1.
pub fn default_factor(periods: &[EvaluationPeriod]) -> f64 {
    match periods {
        [.., prev, last] => (prev.day_count() as f64 / last.day_count() as f64).max(1.0),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodScore {
    pub period: EvaluationPeriod,
    pub achievement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievementReport {
    pub goal_id: NodeId,
    pub periods: Vec<PeriodScore>,
    /// Mean over all periods but the last; absent with a single period.
    pub retrospective_average: Option<f64>,
    pub extrapolation_factor: f64,
    pub forecast: f64,
    pub relative_difference: Option<f64>,
    pub tolerance: f64,
    pub verdict: Option<Verdict>,
    /// Achievement of every goal in the last period.
    pub per_goal: BTreeMap<NodeId, f64>,
    pub impact_timeline: Vec<ImpactWindow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const NO_BASELINE_NOTE: &str = "no retrospective baseline";

/// Assembles a report from already computed period scores; the last period
/// is the partial one being forecast.
pub fn report_from_scores(
    goal_id: NodeId,
    periods: Vec<PeriodScore>,
    factor: f64,
    tolerance: f64,
) -> Result<AchievementReport, ScoreError> {
    let (last, history) = periods.split_last().ok_or(ScoreError::NoPeriods)?;
    let forecast = extrapolate(last.achievement, factor)?;
    let mut notes = Vec::new();
    let (average, rel, verdict) = if history.is_empty() {
        notes.push(NO_BASELINE_NOTE.to_string());
        (None, None, None)
    } else {
        let scores: Vec<f64> = history.iter().map(|p| p.achievement).collect();
        let avg = retrospective_average(&scores)?;
        let (rel, verdict) = compare_and_verdict(forecast, avg, tolerance)?;
        (Some(avg), Some(rel), Some(verdict))
    };
    Ok(AchievementReport {
        goal_id,
        periods,
        retrospective_average: average,
        extrapolation_factor: factor,
        forecast,
        relative_difference: rel,
        tolerance,
        verdict,
        per_goal: BTreeMap::new(),
        impact_timeline: Vec::new(),
        notes,
    })
}

/// Scores `goal_id` over every period and assembles the full report.
pub fn build_report(
    kb: &KnowledgeBase,
    goal_id: NodeId,
    periods: &[EvaluationPeriod],
    factor: Option<f64>,
    tolerance: f64,
) -> Result<AchievementReport, ScoreError> {
    let last = periods.last().ok_or(ScoreError::NoPeriods)?;
    let scores = periods
        .iter()
        .map(|p| {
            Ok(PeriodScore {
                period: *p,
                achievement: goal_achievement(kb, goal_id, p)?,
            })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;
    let factor = factor.unwrap_or_else(|| default_factor(periods));
    let mut report = report_from_scores(goal_id, scores, factor, tolerance)?;
    report.per_goal = score_all(kb, last)?
        .into_iter()
        .filter(|(id, _)| kb.nodes[id].kind == NodeKind::Goal)
        .collect();
    report.impact_timeline = impact_timeline(kb);
    Ok(report)
}
