use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{KnowledgeBase, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueSubject {
    Node(NodeId),
    Edge { parent: NodeId, child: NodeId },
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub subject: IssueSubject,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.subject {
            IssueSubject::Node(id) => write!(f, "{sev}: node {id}: {}", self.message),
            IssueSubject::Edge { parent, child } => write!(f, "{sev}: edge {parent}->{child}: {}", self.message),
            IssueSubject::Document => write!(f, "{sev}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn summary(&self) -> String {
        let errors: Vec<String> = self.errors().map(|i| i.to_string()).collect();
        if errors.is_empty() {
            "no errors".to_string()
        } else {
            errors.join("; ")
        }
    }

    pub fn has_error_containing(&self, needle: &str) -> bool {
        self.errors().any(|i| i.message.contains(needle))
    }
}

#[derive(Default)]
struct Collector {
    issues: Vec<Issue>,
}

impl Collector {
    fn error(&mut self, subject: IssueSubject, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            subject,
            message: message.into(),
        });
    }

    fn warning(&mut self, subject: IssueSubject, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            subject,
            message: message.into(),
        });
    }
}

/// Checks structure and attribute invariants. Problems are reported, never
/// raised, and the knowledge base is not modified.
pub fn validate_kb(kb: &KnowledgeBase) -> ValidationReport {
    let mut c = Collector::default();

    for (&key, node) in &kb.nodes {
        if key != node.id {
            c.error(
                IssueSubject::Node(key),
                format!("stored under key {key} but declares id {}", node.id),
            );
        }
        check_node_attributes(kb, node, &mut c);
    }

    if !kb.nodes.contains_key(&kb.root_id) {
        c.error(IssueSubject::Node(kb.root_id), "root node is missing");
    } else {
        for (parent, _) in kb.parents_of(kb.root_id) {
            c.error(
                IssueSubject::Edge {
                    parent,
                    child: kb.root_id,
                },
                "root must not have a parent",
            );
        }
        for id in unreachable_from_root(kb) {
            c.error(
                IssueSubject::Node(id),
                format!("node {id} is unreachable from root {}", kb.root_id),
            );
        }
    }

    for (parent, child) in cycle_edges(kb) {
        c.error(IssueSubject::Edge { parent, child }, "edge closes a cycle");
    }

    let ok = !c.issues.iter().any(|i| i.severity == Severity::Error);
    ValidationReport { ok, issues: c.issues }
}

fn check_node_attributes(kb: &KnowledgeBase, node: &super::GoalNode, c: &mut Collector) {
    let subject = IssueSubject::Node(node.id);
    match node.kind {
        NodeKind::Goal => {
            if node.children.is_empty() {
                c.error(subject, "goal has no children");
            }
            if node.implementation_degree.is_some() {
                c.error(subject, "goals do not carry an implementation degree");
            }
            if !node.annotations.is_empty() {
                c.error(subject, "goals do not carry annotations");
            }
        }
        NodeKind::Project => {
            if !node.children.is_empty() {
                c.error(subject, "project has children");
            }
            match node.implementation_degree {
                None => c.error(subject, "project lacks an implementation degree"),
                Some(d) if !(0.0..=1.0).contains(&d) => {
                    c.error(subject, format!("implementation degree {d} outside [0, 1]"))
                }
                Some(_) => {}
            }
            if node.annotations.iter().any(|a| a.duration_days == 0) {
                c.error(subject, "annotation with zero duration");
            }
        }
    }

    if let Some(orig) = node.clone_of {
        if !kb.nodes.get(&orig).is_some_and(|n| n.is_project()) {
            c.warning(subject, format!("clone_of refers to {orig}, which is not a project"));
        }
    }

    let mut seen = BTreeSet::new();
    for link in &node.children {
        let edge = IssueSubject::Edge {
            parent: node.id,
            child: link.id,
        };
        if !kb.nodes.contains_key(&link.id) {
            c.error(edge, format!("dangling child id {}", link.id));
        }
        if !seen.insert(link.id) {
            c.error(edge, "duplicate edge");
        }
        if !link.weight.is_finite() {
            c.error(edge, "weight is not a finite number");
        } else if link.weight < 0.0 {
            c.error(edge, format!("negative weight {}", link.weight));
        }
    }
    if !node.children.is_empty() {
        let sum = node.weight_sum();
        if !(sum > 0.0) && node.children.iter().all(|l| l.weight.is_finite() && l.weight >= 0.0) {
            c.error(subject, "degenerate weights: child weights sum to zero");
        }
    }
}

fn unreachable_from_root(kb: &KnowledgeBase) -> Vec<NodeId> {
    let mut seen = BTreeSet::from([kb.root_id]);
    let mut queue = VecDeque::from([kb.root_id]);
    while let Some(id) = queue.pop_front() {
        if let Some(node) = kb.nodes.get(&id) {
            for link in &node.children {
                if kb.nodes.contains_key(&link.id) && seen.insert(link.id) {
                    queue.push_back(link.id);
                }
            }
        }
    }
    kb.nodes.keys().copied().filter(|id| !seen.contains(id)).collect()
}

/// Back edges found by an iterative depth-first search started from every
/// node, so cycles in unreachable parts are reported too.
fn cycle_edges(kb: &KnowledgeBase) -> Vec<(NodeId, NodeId)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: HashMap<NodeId, Mark> = HashMap::new();
    let mut back = Vec::new();

    for &start in kb.nodes.keys() {
        if marks.contains_key(&start) {
            continue;
        }
        let mut stack: Vec<(NodeId, usize)> = vec![(start, 0)];
        marks.insert(start, Mark::Active);
        while let Some(top) = stack.last_mut() {
            let id = top.0;
            let children = &kb.nodes[&id].children;
            if top.1 < children.len() {
                let child = children[top.1].id;
                top.1 += 1;
                if !kb.nodes.contains_key(&child) {
                    continue;
                }
                match marks.get(&child) {
                    Some(Mark::Active) => back.push((id, child)),
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(child, Mark::Active);
                        stack.push((child, 0));
                    }
                }
            } else {
                marks.insert(id, Mark::Done);
                stack.pop();
            }
        }
    }
    back
}
