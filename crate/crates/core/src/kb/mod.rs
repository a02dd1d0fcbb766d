//! Weighted goal hierarchy of the subject domain.
//!
//! The hierarchy is a DAG: goals decompose into weighted children, projects
//! are leaves that carry an implementation degree and the temporal
//! annotations produced from detected throw-ins. A [`KnowledgeBase`] is a
//! value; every edit returns a new one.

mod format;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{add_days, DateRange};

pub use format::{load_kb, parse_document, save_kb, KbDocument, FORMAT_VERSION};
pub use validate::{validate_kb, Issue, IssueSubject, Severity, ValidationReport};

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("cannot parse knowledge base document: {0}")]
    Parse(String),
    #[error("unsupported knowledge base format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedFormat(u32),
    #[error("knowledge base failed validation: {}", .0.summary())]
    Invalid(ValidationReport),
    #[error("degenerate weights under node {0}: child weights must have a positive sum")]
    DegenerateWeights(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is a goal; only projects carry this attribute")]
    NotAProject(NodeId),
    #[error("implementation degree {0} is outside [0, 1]")]
    DegreeOutOfRange(f64),
    #[error("annotation duration must be at least one day")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Goal,
    Project,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildLink {
    pub id: NodeId,
    pub weight: f64,
}

/// Where an annotation came from, when it was produced by the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRef {
    pub component_id: u32,
    pub onset: NaiveDate,
    pub peak_scale: f64,
    pub intensity: f64,
}

/// Timing of one information impact on a project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalAnnotation {
    pub onset: NaiveDate,
    pub duration_days: u32,
    pub impact_delay_months: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_detection: Option<DetectionRef>,
}

impl TemporalAnnotation {
    pub fn new(onset: NaiveDate, duration_days: u32, impact_delay_months: u32) -> Result<Self, KbError> {
        if duration_days == 0 {
            return Err(KbError::ZeroDuration);
        }
        Ok(Self {
            onset,
            duration_days,
            impact_delay_months,
            source_detection: None,
        })
    }

    pub fn with_source(mut self, source: DetectionRef) -> Self {
        self.source_detection = Some(source);
        self
    }

    /// Days on which the throw-in was active.
    pub fn active_days(&self) -> DateRange {
        DateRange {
            start: self.onset,
            end: add_days(self.onset, u64::from(self.duration_days.max(1)) - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalNode {
    pub id: NodeId,
    pub formulation: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ChildLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implementation_degree: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<TemporalAnnotation>,
    /// Set on projects that were split off another project because a second
    /// throw-in hit the same component within one analysis period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clone_of: Option<NodeId>,
}

impl GoalNode {
    pub fn goal(id: NodeId, formulation: impl Into<String>, children: Vec<ChildLink>) -> Self {
        Self {
            id,
            formulation: formulation.into(),
            kind: NodeKind::Goal,
            children,
            implementation_degree: None,
            annotations: Vec::new(),
            clone_of: None,
        }
    }

    pub fn project(id: NodeId, formulation: impl Into<String>, degree: f64) -> Self {
        Self {
            id,
            formulation: formulation.into(),
            kind: NodeKind::Project,
            children: Vec::new(),
            implementation_degree: Some(degree),
            annotations: Vec::new(),
            clone_of: None,
        }
    }

    pub fn is_project(&self) -> bool {
        self.kind == NodeKind::Project
    }

    pub fn weight_sum(&self) -> f64 {
        self.children.iter().map(|c| c.weight).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub root_id: NodeId,
    pub nodes: BTreeMap<NodeId, GoalNode>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl KnowledgeBase {
    /// Builds a knowledge base and rejects it unless [`validate_kb`] passes.
    pub fn new(
        root_id: NodeId,
        nodes: impl IntoIterator<Item = GoalNode>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, KbError> {
        let kb = Self::from_parts(root_id, nodes, metadata);
        let report = validate_kb(&kb);
        if report.ok {
            Ok(kb)
        } else {
            Err(KbError::Invalid(report))
        }
    }

    /// Assembles a knowledge base without validating it.
    pub fn from_parts(
        root_id: NodeId,
        nodes: impl IntoIterator<Item = GoalNode>,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        Self {
            root_id,
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
            metadata,
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&GoalNode, KbError> {
        self.nodes.get(&id).ok_or(KbError::UnknownNode(id))
    }

    pub fn root(&self) -> &GoalNode {
        &self.nodes[&self.root_id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn projects(&self) -> impl Iterator<Item = &GoalNode> {
        self.nodes.values().filter(|n| n.is_project())
    }

    /// Parents of `id` together with the raw weight of the connecting edge.
    pub fn parents_of(&self, id: NodeId) -> Vec<(NodeId, f64)> {
        self.nodes
            .values()
            .flat_map(|n| {
                n.children
                    .iter()
                    .filter(move |c| c.id == id)
                    .map(move |c| (n.id, c.weight))
            })
            .collect()
    }

    /// Every (parent, child) edge, in node order.
    pub fn edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.nodes
            .values()
            .flat_map(|n| n.children.iter().map(move |c| (n.id, c.id)))
            .collect()
    }

    fn smallest_unused_id(&self) -> NodeId {
        (0..)
            .find(|id| !self.nodes.contains_key(id))
            .expect("id space is not exhausted")
    }
}

/// Divides every parent's child weights by their sum.
pub fn normalize_weights(kb: &KnowledgeBase) -> Result<KnowledgeBase, KbError> {
    let mut out = kb.clone();
    for node in out.nodes.values_mut() {
        if node.children.is_empty() {
            continue;
        }
        let sum = node.weight_sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(KbError::DegenerateWeights(node.id));
        }
        for child in &mut node.children {
            child.weight /= sum;
        }
    }
    Ok(out)
}

fn require_project(kb: &KnowledgeBase, id: NodeId) -> Result<&GoalNode, KbError> {
    let node = kb.node(id)?;
    if !node.is_project() {
        return Err(KbError::NotAProject(id));
    }
    Ok(node)
}

/// Appends `annotation` to project `project_id`.
///
/// A component that already carries an annotation in the same calendar year
/// is split: the original becomes "… 1", and a clone "… N" holding the new
/// annotation is attached under the same parents with the same edge weights.
/// The clone takes the smallest unused node id.
pub fn apply_annotation(
    kb: &KnowledgeBase,
    project_id: NodeId,
    annotation: TemporalAnnotation,
) -> Result<KnowledgeBase, KbError> {
    if annotation.duration_days == 0 {
        return Err(KbError::ZeroDuration);
    }
    let target = require_project(kb, project_id)?;
    let family_root = target.clone_of.unwrap_or(project_id);
    let root = require_project(kb, family_root)?;
    let mut family: Vec<NodeId> = vec![family_root];
    family.extend(kb.projects().filter(|n| n.clone_of == Some(family_root)).map(|n| n.id));

    let year = annotation.onset.year();
    let busy = family
        .iter()
        .any(|id| kb.nodes[id].annotations.iter().any(|a| a.onset.year() == year));

    let mut out = kb.clone();
    if !busy {
        out.nodes
            .get_mut(&project_id)
            .expect("checked above")
            .annotations
            .push(annotation);
        return Ok(out);
    }

    let base = if family.len() == 1 {
        root.formulation.clone()
    } else {
        root.formulation
            .strip_suffix(" 1")
            .unwrap_or(&root.formulation)
            .to_string()
    };
    if family.len() == 1 {
        out.nodes.get_mut(&family_root).expect("checked above").formulation = format!("{base} 1");
    }
    let clone_id = kb.smallest_unused_id();
    let mut clone = GoalNode::project(
        clone_id,
        format!("{base} {}", family.len() + 1),
        root.implementation_degree.unwrap_or(0.0),
    );
    clone.annotations.push(annotation);
    clone.clone_of = Some(family_root);

    for (parent, weight) in kb.parents_of(family_root) {
        out.nodes
            .get_mut(&parent)
            .expect("parent exists")
            .children
            .push(ChildLink { id: clone_id, weight });
    }
    out.nodes.insert(clone_id, clone);
    Ok(out)
}

/// Replaces a project's implementation degree.
pub fn set_implementation(kb: &KnowledgeBase, project_id: NodeId, degree: f64) -> Result<KnowledgeBase, KbError> {
    if !(0.0..=1.0).contains(&degree) {
        return Err(KbError::DegreeOutOfRange(degree));
    }
    require_project(kb, project_id)?;
    let mut out = kb.clone();
    out.nodes
        .get_mut(&project_id)
        .expect("checked above")
        .implementation_degree = Some(degree);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn two_level(weights: &[f64]) -> KnowledgeBase {
        let children = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| ChildLink {
                id: i as NodeId + 1,
                weight: w,
            })
            .collect();
        let mut nodes = vec![GoalNode::goal(0, "root", children)];
        nodes.extend((0..weights.len()).map(|i| GoalNode::project(i as NodeId + 1, format!("p{i}"), 1.0)));
        KnowledgeBase::new(0, nodes, BTreeMap::new()).unwrap()
    }

    fn root_weights(kb: &KnowledgeBase) -> Vec<f64> {
        kb.root().children.iter().map(|c| c.weight).collect()
    }

    #[test]
    fn proportional_normalization() {
        let kb = normalize_weights(&two_level(&[2.0, 3.0, 5.0])).unwrap();
        let w = root_weights(&kb);
        for (got, want) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_normalization() {
        let kb = normalize_weights(&two_level(&[1.0; 4])).unwrap();
        assert_eq!(root_weights(&kb), vec![0.25; 4]);
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let kb = KnowledgeBase::from_parts(
            0,
            vec![
                GoalNode::goal(0, "root", vec![ChildLink { id: 1, weight: 0.0 }]),
                GoalNode::project(1, "p", 1.0),
            ],
            BTreeMap::new(),
        );
        assert!(matches!(normalize_weights(&kb), Err(KbError::DegenerateWeights(0))));
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize_weights(&two_level(&[0.3, 7.0, 1.1])).unwrap();
        let twice = normalize_weights(&once).unwrap();
        for (a, b) in root_weights(&once).iter().zip(root_weights(&twice)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn annotation_appended_to_unannotated_project() {
        let kb = fixtures::nasu_base();
        let ann = TemporalAnnotation::new(d("2015-11-30"), 14, 10).unwrap();
        let out = apply_annotation(&kb, 14, ann.clone()).unwrap();
        let node = out.node(14).unwrap();
        assert_eq!(
            node.formulation,
            "Understatement of the level of scientific achievements of the NASU"
        );
        assert_eq!(node.annotations, vec![ann]);
        assert_eq!(out.edges(), kb.edges());
        assert!(
            kb.node(14).unwrap().annotations.is_empty(),
            "input must be left untouched"
        );
    }

    #[test]
    fn second_annotation_in_same_year_clones_project() {
        let kb = fixtures::nasu_base();
        let first = TemporalAnnotation::new(d("2015-03-02"), 9, 9).unwrap();
        let second = TemporalAnnotation::new(d("2015-09-14"), 15, 11).unwrap();
        let kb = apply_annotation(&kb, 25, first).unwrap();
        let kb = apply_annotation(&kb, 25, second).unwrap();
        let names: Vec<_> = kb
            .nodes
            .values()
            .filter(|n| n.formulation.starts_with("Bureaucracy"))
            .map(|n| (n.id, n.formulation.as_str(), n.annotations[0].duration_days))
            .collect();
        assert_eq!(
            names,
            vec![
                (15, "Bureaucracy in the NASU 2", 15),
                (25, "Bureaucracy in the NASU 1", 9)
            ]
        );
        let parents_orig = kb.parents_of(25);
        let parents_clone = kb.parents_of(15);
        assert_eq!(parents_orig, parents_clone);
        assert!(validate_kb(&kb).ok);
    }

    #[test]
    fn third_annotation_extends_family() {
        let kb = fixtures::nasu_base();
        let mut kb = kb;
        for onset in ["2015-01-05", "2015-05-05", "2015-10-05"] {
            kb = apply_annotation(&kb, 24, TemporalAnnotation::new(d(onset), 5, 1).unwrap()).unwrap();
        }
        let family: Vec<_> = kb
            .nodes
            .values()
            .filter(|n| n.formulation.starts_with("Corruption"))
            .map(|n| n.formulation.clone())
            .collect();
        assert_eq!(family.len(), 3);
        assert!(family.contains(&"Corruption in the NASU 3".to_string()));
    }

    #[test]
    fn annotations_in_different_years_do_not_clone() {
        let kb = fixtures::nasu_base();
        let kb = apply_annotation(&kb, 14, TemporalAnnotation::new(d("2014-06-01"), 5, 1).unwrap()).unwrap();
        let kb = apply_annotation(&kb, 14, TemporalAnnotation::new(d("2015-06-01"), 5, 1).unwrap()).unwrap();
        assert_eq!(kb.len(), fixtures::nasu_base().len());
        assert_eq!(kb.node(14).unwrap().annotations.len(), 2);
    }

    #[test]
    fn annotating_a_goal_fails() {
        let kb = fixtures::nasu_base();
        let ann = TemporalAnnotation::new(d("2015-11-30"), 14, 10).unwrap();
        assert!(matches!(apply_annotation(&kb, 1, ann), Err(KbError::NotAProject(1))));
        let ann = TemporalAnnotation::new(d("2015-11-30"), 14, 10).unwrap();
        assert!(matches!(
            apply_annotation(&kb, 999, ann),
            Err(KbError::UnknownNode(999))
        ));
        assert!(matches!(
            TemporalAnnotation::new(d("2015-11-30"), 0, 10),
            Err(KbError::ZeroDuration)
        ));
    }

    #[test]
    fn implementation_degree_updates() {
        let kb = fixtures::nasu_2015();
        let out = set_implementation(&kb, 13, 0.0).unwrap();
        assert_eq!(out.node(13).unwrap().implementation_degree, Some(0.0));
        let out = set_implementation(&out, 14, 1.0).unwrap();
        assert_eq!(out.node(14).unwrap().implementation_degree, Some(1.0));
        assert_eq!(out.edges(), kb.edges());
        for (id, node) in &kb.nodes {
            if *id != 13 && *id != 14 {
                assert_eq!(node, out.node(*id).unwrap());
            }
        }
        assert!(matches!(
            set_implementation(&kb, 13, 1.5),
            Err(KbError::DegreeOutOfRange(_))
        ));
        assert!(matches!(
            set_implementation(&kb, 13, f64::NAN),
            Err(KbError::DegreeOutOfRange(_))
        ));
        assert!(matches!(set_implementation(&kb, 0, 0.5), Err(KbError::NotAProject(0))));
    }

    #[test]
    fn active_days_cover_duration() {
        let ann = TemporalAnnotation::new(d("2015-11-30"), 14, 10).unwrap();
        assert_eq!(ann.active_days().end, d("2015-12-13"));
        assert_eq!(ann.active_days().day_count(), 14);
    }
}
