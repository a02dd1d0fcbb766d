use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::Json;
use chrono::NaiveDate;
use iopscope_core::calendar::DateRange;
use iopscope_core::detect::Detection;
use iopscope_core::export::{read_detections, read_report, read_spectrogram};
use iopscope_core::kb::{normalize_weights, set_implementation, ChildLink, KbDocument, KnowledgeBase, NodeId};
use iopscope_core::review::{ReviewItem, ReviewQueue};
use iopscope_core::scoring::{score_all, AchievementReport};
use iopscope_core::wavelet::{MotherWavelet, WaveletKind};
use iopscope_core::TimeSeries;
use serde::{Deserialize, Serialize};

use crate::{ApiError, AppState};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(e.status(), "bad_body", e.body_text()))
}

#[derive(Debug, Default, Deserialize)]
pub struct RangeQuery {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub wavelet: Option<String>,
}

impl RangeQuery {
    fn within(&self, span: DateRange) -> Result<DateRange, ApiError> {
        let start = self.from.unwrap_or(span.start);
        let end = self.to.unwrap_or(span.end);
        DateRange::new(start, end).map_err(|e| ApiError::bad_request(e.to_string()))
    }
}

pub async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

pub async fn no_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

/// The knowledge base as stored, plus each parent's normalised child weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbView {
    pub kb: KbDocument,
    pub normalized_weights: BTreeMap<NodeId, Vec<ChildLink>>,
}

impl KbView {
    fn of(kb: &KnowledgeBase) -> Result<Self, ApiError> {
        let normalized = normalize_weights(kb)?;
        Ok(Self {
            kb: KbDocument::from(kb),
            normalized_weights: normalized
                .nodes
                .values()
                .filter(|n| !n.children.is_empty())
                .map(|n| (n.id, n.children.clone()))
                .collect(),
        })
    }
}

pub async fn get_kb(State(state): Shared) -> ApiResult<KbView> {
    Ok(Json(KbView::of(&state.snapshot())?))
}

/// Partial update of one node. Weights name existing children and replace
/// their raw weight.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePatch {
    #[serde(default)]
    pub implementation_degree: Option<f64>,
    #[serde(default)]
    pub weights: Option<Vec<ChildLink>>,
}

fn patched(kb: &KnowledgeBase, id: NodeId, patch: &NodePatch) -> Result<KnowledgeBase, ApiError> {
    let mut out = match patch.implementation_degree {
        Some(degree) => set_implementation(kb, id, degree)?,
        None => {
            kb.node(id)?;
            kb.clone()
        }
    };
    if let Some(weights) = &patch.weights {
        let node = out.nodes.get_mut(&id).expect("node exists");
        for link in weights {
            let child = node
                .children
                .iter_mut()
                .find(|c| c.id == link.id)
                .ok_or_else(|| ApiError::invalid("unknown_child", format!("node {id} has no child {}", link.id)))?;
            child.weight = link.weight;
        }
    }
    Ok(KnowledgeBase::new(out.root_id, out.nodes.into_values(), out.metadata)?)
}

pub async fn put_node(
    State(state): Shared,
    Path(id): Path<NodeId>,
    payload: Result<Json<NodePatch>, JsonRejection>,
) -> ApiResult<KbView> {
    let patch = body(payload)?;
    let _guard = state.writer.lock().await;
    let current = state.snapshot();
    let updated = patched(&current, id, &patch)?;
    let view = KbView::of(&updated)?;
    state.persist(&updated)?;
    state.kb.store(Arc::new(updated));
    log::info!("node {id} updated");
    Ok(Json(view))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub overrides: BTreeMap<NodeId, f64>,
    pub period: DateRange,
    #[serde(default)]
    pub goal_id: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub goal_id: NodeId,
    pub period: DateRange,
    pub achievement: f64,
    /// Every node's score in the period, goals and projects alike.
    pub scores: BTreeMap<NodeId, f64>,
}

/// Scores a transient copy of the current snapshot; nothing is stored.
pub async fn post_whatif(
    State(state): Shared,
    payload: Result<Json<WhatIfRequest>, JsonRejection>,
) -> ApiResult<WhatIfResponse> {
    let req = body(payload)?;
    let snapshot = state.snapshot();
    let mut kb: KnowledgeBase = (*snapshot).clone();
    for (&id, &degree) in &req.overrides {
        kb = set_implementation(&kb, id, degree)?;
    }
    let goal_id = req.goal_id.unwrap_or(kb.root_id);
    kb.node(goal_id)?;
    let scores = score_all(&kb, &req.period)?;
    Ok(Json(WhatIfResponse {
        goal_id,
        period: req.period,
        achievement: scores[&goal_id],
        scores,
    }))
}

pub async fn get_series(
    State(state): Shared,
    Path(id): Path<u32>,
    Query(q): Query<RangeQuery>,
) -> ApiResult<TimeSeries> {
    let series = state.workspace.read_series(id)?;
    let range = q.within(series.span())?;
    series
        .slice(range)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("series {id} has no data in {range}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrogramView {
    pub component_id: u32,
    pub wavelet: MotherWavelet,
    /// Analysis period the spectrogram was computed over.
    pub period: DateRange,
    /// First day of the returned columns.
    pub start: NaiveDate,
    pub scales: Vec<f64>,
    /// `coefficients[scale][day]`.
    pub coefficients: Vec<Vec<f64>>,
    pub coi_mask: Vec<Vec<bool>>,
}

fn choose_period(periods: &[DateRange], q: &RangeQuery) -> Option<DateRange> {
    if let (Some(from), Some(to)) = (q.from, q.to) {
        if let Some(p) = periods.iter().find(|p| p.start == from && p.end == to) {
            return Some(*p);
        }
    }
    if let Some(from) = q.from {
        if let Some(p) = periods.iter().find(|p| p.contains(from)) {
            return Some(*p);
        }
    }
    periods.last().copied()
}

pub async fn get_spectrogram(
    State(state): Shared,
    Path(id): Path<u32>,
    Query(q): Query<RangeQuery>,
) -> ApiResult<SpectrogramView> {
    let kind: WaveletKind = match &q.wavelet {
        Some(w) => w.parse().map_err(ApiError::bad_request)?,
        None => WaveletKind::Morlet,
    };
    let periods = state.workspace.analysis_periods()?;
    let period = choose_period(&periods, &q).ok_or_else(|| ApiError::not_found("no analysis has been run"))?;
    let s = read_spectrogram(&state.workspace.analysis_dir(&period), id, kind)?;
    let range = q.within(period)?;
    if !range.intersects(&period) {
        return Err(ApiError::not_found(format!(
            "analysis period {period} does not overlap {range}"
        )));
    }
    let start = range.start.max(period.start);
    let end = range.end.min(period.end);
    let lo = (start - s.start).num_days() as usize;
    let hi = ((end - s.start).num_days() as usize + 1).min(s.days());
    Ok(Json(SpectrogramView {
        component_id: id,
        wavelet: s.wavelet,
        period,
        start,
        scales: s.scales.scales().to_vec(),
        coefficients: s.coefficients.iter().map(|r| r[lo..hi].to_vec()).collect(),
        coi_mask: s.coi_mask.iter().map(|r| r[lo..hi].to_vec()).collect(),
    }))
}

pub async fn get_detections(State(state): Shared, Query(q): Query<RangeQuery>) -> ApiResult<Vec<Detection>> {
    let all = read_detections(&state.workspace.detections_path())?;
    let keep = |d: &Detection| q.from.is_none_or(|f| d.onset >= f) && q.to.is_none_or(|t| d.onset <= t);
    Ok(Json(all.into_iter().filter(keep).collect()))
}

pub async fn get_report(State(state): Shared) -> ApiResult<AchievementReport> {
    Ok(Json(read_report(&state.workspace.report_json_path())?))
}

fn current_queue(state: &AppState) -> Result<ReviewQueue, ApiError> {
    let stored = match ReviewQueue::load(&state.workspace.review_path()) {
        Ok(q) => q,
        Err(e) if e.is_not_found() => ReviewQueue::default(),
        Err(e) => return Err(e.into()),
    };
    let detections = match read_detections(&state.workspace.detections_path()) {
        Ok(d) => d,
        Err(e) if e.is_not_found() => return Ok(stored),
        Err(e) => return Err(e.into()),
    };
    Ok(stored.sync(&detections, &state.delays))
}

pub async fn get_review(State(state): Shared) -> ApiResult<ReviewQueue> {
    Ok(Json(current_queue(&state)?))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewDecision {
    #[serde(default)]
    pub impact_delay_months: Option<u32>,
}

pub async fn accept_review(State(state): Shared, Path(index): Path<usize>, raw: Bytes) -> ApiResult<ReviewItem> {
    let decision: ReviewDecision = if raw.iter().all(u8::is_ascii_whitespace) {
        ReviewDecision::default()
    } else {
        serde_json::from_slice(&raw).map_err(|e| ApiError::invalid("bad_body", e.to_string()))?
    };
    let _guard = state.writer.lock().await;
    let mut queue = current_queue(&state)?;
    let current = state.snapshot();
    let updated = queue.accept(index, &current, decision.impact_delay_months)?;
    state.persist(&updated)?;
    queue.save(&state.workspace.review_path())?;
    state.kb.store(Arc::new(updated));
    log::info!("review item {index} accepted");
    Ok(Json(queue.items[index].clone()))
}

pub async fn reject_review(State(state): Shared, Path(index): Path<usize>) -> ApiResult<ReviewItem> {
    let _guard = state.writer.lock().await;
    let mut queue = current_queue(&state)?;
    queue.reject(index)?;
    queue.save(&state.workspace.review_path())?;
    log::info!("review item {index} rejected");
    Ok(Json(queue.items[index].clone()))
}
