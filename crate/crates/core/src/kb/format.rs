//! Text format of the knowledge base file (TOML, `format = 1`).
//!
//! ```toml
//! format = 1
//! root = 0
//!
//! [meta]
//! title = "..."
//!
//! [[nodes]]
//! id = 0
//! formulation = "..."
//! kind = "goal"
//! children = [{ id = 1, weight = 1.0 }]
//!
//! [[nodes]]
//! id = 1
//! formulation = "..."
//! kind = "project"
//! implementation_degree = 1.0
//! annotations = [{ onset = "2015-11-30", duration_days = 14, impact_delay_months = 10 }]
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{validate_kb, GoalNode, KbError, KnowledgeBase, NodeId, TemporalAnnotation};

pub const FORMAT_VERSION: u32 = 1;

/// Serialized form of a [`KnowledgeBase`]. Nodes are kept as a list so that
/// duplicate ids in a hand-edited file can be reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbDocument {
    pub format: u32,
    pub root: NodeId,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub nodes: Vec<GoalNode>,
}

impl From<&KnowledgeBase> for KbDocument {
    fn from(kb: &KnowledgeBase) -> Self {
        Self {
            format: FORMAT_VERSION,
            root: kb.root_id,
            meta: kb.metadata.clone(),
            nodes: kb.nodes.values().cloned().collect(),
        }
    }
}

impl KbDocument {
    /// Converts to a validated knowledge base.
    pub fn into_kb(self) -> Result<KnowledgeBase, KbError> {
        if self.format != FORMAT_VERSION {
            return Err(KbError::UnsupportedFormat(self.format));
        }
        let mut seen = BTreeSet::new();
        let mut report = super::ValidationReport {
            ok: true,
            issues: Vec::new(),
        };
        for node in &self.nodes {
            if !seen.insert(node.id) {
                report.ok = false;
                report.issues.push(super::Issue {
                    severity: super::Severity::Error,
                    subject: super::IssueSubject::Node(node.id),
                    message: format!("duplicate node id {}", node.id),
                });
            }
        }
        if !report.ok {
            return Err(KbError::Invalid(report));
        }
        let kb = KnowledgeBase::from_parts(self.root, self.nodes, self.meta);
        let report = validate_kb(&kb);
        if !report.ok {
            return Err(KbError::Invalid(report));
        }
        Ok(kb)
    }
}

/// Parses the document without validating the hierarchy.
pub fn parse_document(document: &str) -> Result<KbDocument, KbError> {
    toml::from_str(document).map_err(|e| KbError::Parse(e.to_string()))
}

/// Parses and validates a knowledge base file.
pub fn load_kb(document: &str) -> Result<KnowledgeBase, KbError> {
    parse_document(document)?.into_kb()
}

fn scalar<T: Serialize + ?Sized>(v: &T) -> String {
    toml::Value::try_from(v)
        .expect("knowledge base values are representable in TOML")
        .to_string()
}

fn annotation_inline(a: &TemporalAnnotation) -> String {
    let mut s = format!(
        "{{ onset = \"{}\", duration_days = {}, impact_delay_months = {}",
        a.onset, a.duration_days, a.impact_delay_months
    );
    if let Some(src) = &a.source_detection {
        s.push_str(&format!(", source_detection = {}", scalar(src)));
    }
    s.push_str(" }");
    s
}

/// Renders a knowledge base in the file format accepted by [`load_kb`], one
/// `[[nodes]]` table per node with inline child and annotation lists.
pub fn save_kb(kb: &KnowledgeBase) -> String {
    let mut out = format!("format = {FORMAT_VERSION}\nroot = {}\n", kb.root_id);
    if !kb.metadata.is_empty() {
        out.push_str("\n[meta]\n");
        for (k, v) in &kb.metadata {
            out.push_str(&format!("{} = {}\n", toml_key(k), scalar(v)));
        }
    }
    for node in kb.nodes.values() {
        out.push_str("\n[[nodes]]\n");
        out.push_str(&format!("id = {}\n", node.id));
        out.push_str(&format!("formulation = {}\n", scalar(&node.formulation)));
        out.push_str(&format!("kind = {}\n", scalar(&node.kind)));
        if !node.children.is_empty() {
            let children: Vec<String> = node
                .children
                .iter()
                .map(|c| format!("{{ id = {}, weight = {} }}", c.id, scalar(&c.weight)))
                .collect();
            out.push_str(&format!("children = [{}]\n", children.join(", ")));
        }
        if let Some(d) = node.implementation_degree {
            out.push_str(&format!("implementation_degree = {}\n", scalar(&d)));
        }
        if let Some(c) = node.clone_of {
            out.push_str(&format!("clone_of = {c}\n"));
        }
        if !node.annotations.is_empty() {
            let anns: Vec<String> = node.annotations.iter().map(annotation_inline).collect();
            out.push_str(&format!("annotations = [{}]\n", anns.join(", ")));
        }
    }
    out
}

fn toml_key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        scalar(k)
    }
}
