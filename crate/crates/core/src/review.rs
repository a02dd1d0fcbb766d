//! Turning detections into knowledge-base annotations.
//!
//! The impact delay of a throw-in (months until the target indicators are
//! expected to worsen) is domain knowledge, not something the signal carries,
//! so it comes from a [`DelayTable`]. Detections awaiting a decision live in a
//! [`ReviewQueue`] persisted in the workspace.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Detection;
use crate::export::{self, ExportError};
use crate::kb::{apply_annotation, DetectionRef, KbError, KnowledgeBase, NodeId, TemporalAnnotation};

/// Entries whose onset is at most this many days from a detection's onset
/// apply to it.
pub const ONSET_MATCH_DAYS: i64 = 7;

#[derive(Debug, Error, PartialEq)]
pub enum ReviewError {
    #[error("detection references unknown component {0}")]
    UnknownComponent(u32),
    #[error("component {0} has no impact delay in the delay table and none was given")]
    MissingDelay(u32),
    #[error("review item {0} does not exist")]
    NoSuchItem(usize),
    #[error("review item {index} is already {status}")]
    AlreadyDecided { index: usize, status: ReviewStatus },
    #[error("delay table: {0}")]
    Table(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayEntry {
    pub component: u32,
    pub months: u32,
    /// Restricts the entry to the detection starting near this date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<NaiveDate>,
}

/// Impact delays per component, optionally per throw-in.
///
/// ```toml
/// default_months = 6
///
/// [[entries]]
/// component = 14
/// months = 10
/// onset = "2015-11-30"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_months: Option<u32>,
    #[serde(default)]
    pub entries: Vec<DelayEntry>,
}

impl DelayTable {
    pub fn parse(document: &str) -> Result<Self, ReviewError> {
        toml::from_str(document).map_err(|e| ReviewError::Table(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("delay table serialises")
    }

    /// Nearest dated entry within [`ONSET_MATCH_DAYS`], then the component's
    /// undated entry, then the table default.
    pub fn lookup(&self, component: u32, onset: NaiveDate) -> Option<u32> {
        let dated = self
            .entries
            .iter()
            .filter(|e| e.component == component)
            .filter_map(|e| e.onset.map(|o| ((o - onset).num_days().abs(), e.months)))
            .filter(|(gap, _)| *gap <= ONSET_MATCH_DAYS)
            .min_by_key(|(gap, _)| *gap)
            .map(|(_, m)| m);
        dated
            .or_else(|| {
                self.entries
                    .iter()
                    .find(|e| e.component == component && e.onset.is_none())
                    .map(|e| e.months)
            })
            .or(self.default_months)
    }
}

pub fn detection_ref(d: &Detection) -> DetectionRef {
    DetectionRef {
        component_id: d.component_id,
        onset: d.onset,
        peak_scale: d.peak_scale,
        intensity: d.intensity,
    }
}

pub fn annotation_for(d: &Detection, impact_delay_months: u32) -> Result<TemporalAnnotation, KbError> {
    Ok(TemporalAnnotation::new(d.onset, d.duration_days, impact_delay_months)?.with_source(detection_ref(d)))
}

/// Whether the component's project family already carries this detection.
pub fn already_applied(kb: &KnowledgeBase, d: &Detection) -> bool {
    let source = detection_ref(d);
    kb.projects()
        .filter(|p| p.id == d.component_id || p.clone_of == Some(d.component_id))
        .flat_map(|p| &p.annotations)
        .any(|a| a.source_detection.as_ref() == Some(&source))
}

/// Annotates the project mapped to the detection's component. A detection
/// already present in the KB leaves it unchanged.
pub fn apply_detection(
    kb: &KnowledgeBase,
    d: &Detection,
    impact_delay_months: u32,
) -> Result<KnowledgeBase, ReviewError> {
    let project: NodeId = d.component_id;
    match kb.nodes.get(&project) {
        Some(n) if n.is_project() => {}
        _ => return Err(ReviewError::UnknownComponent(d.component_id)),
    }
    if already_applied(kb, d) {
        return Ok(kb.clone());
    }
    Ok(apply_annotation(kb, project, annotation_for(d, impact_delay_months)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

impl std::fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Accepted => "accepted",
            ReviewStatus::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub detection: Detection,
    pub status: ReviewStatus,
    /// Delay suggested by the table; the analyst may override it on accept.
    pub default_delay_months: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_delay_months: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub items: Vec<ReviewItem>,
}

impl ReviewQueue {
    pub fn from_detections(detections: &[Detection], delays: &DelayTable) -> Self {
        let items = detections
            .iter()
            .map(|d| ReviewItem {
                detection: d.clone(),
                status: ReviewStatus::Pending,
                default_delay_months: delays.lookup(d.component_id, d.onset),
                impact_delay_months: None,
            })
            .collect();
        Self { items }
    }

    /// Rebuilds the queue for a fresh detection list, keeping the decisions
    /// already taken on detections that are still present.
    pub fn sync(&self, detections: &[Detection], delays: &DelayTable) -> Self {
        let mut fresh = Self::from_detections(detections, delays);
        for item in &mut fresh.items {
            if let Some(old) = self.items.iter().find(|o| o.detection == item.detection) {
                item.status = old.status;
                item.impact_delay_months = old.impact_delay_months;
            }
        }
        fresh
    }

    pub fn load(path: &Path) -> Result<Self, ExportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ExportError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ExportError> {
        let mut text = serde_json::to_string_pretty(self).expect("queue serialises");
        text.push('\n');
        export::write_atomic(path, text.as_bytes())
    }

    fn pending(&self, index: usize) -> Result<&ReviewItem, ReviewError> {
        let item = self.items.get(index).ok_or(ReviewError::NoSuchItem(index))?;
        if item.status != ReviewStatus::Pending {
            return Err(ReviewError::AlreadyDecided {
                index,
                status: item.status,
            });
        }
        Ok(item)
    }

    /// Applies item `index` to `kb` with the given delay (or the table
    /// default) and marks it accepted. On error neither value changes.
    pub fn accept(
        &mut self,
        index: usize,
        kb: &KnowledgeBase,
        delay: Option<u32>,
    ) -> Result<KnowledgeBase, ReviewError> {
        let item = self.pending(index)?;
        let months = delay
            .or(item.default_delay_months)
            .ok_or(ReviewError::MissingDelay(item.detection.component_id))?;
        let updated = apply_detection(kb, &item.detection, months)?;
        let item = &mut self.items[index];
        item.status = ReviewStatus::Accepted;
        item.impact_delay_months = Some(months);
        Ok(updated)
    }

    pub fn reject(&mut self, index: usize) -> Result<(), ReviewError> {
        self.pending(index)?;
        self.items[index].status = ReviewStatus::Rejected;
        Ok(())
    }
}
