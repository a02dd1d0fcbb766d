//! Bundled example knowledge bases and seeded synthetic series.
//!
//! `nasu_2015.toml` is the 27-node hierarchy as it stands after the 2015
//! throw-ins were entered; `nasu_base.toml` is the same decomposition before
//! any annotation, with one project per monitored component. Edge topology,
//! weights and most annotation dates are synthetic and marked as such in the
//! files' `meta` tables.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::calendar::DateRange;
use crate::ingest::TimeSeries;
use crate::kb::{load_kb, ChildLink, GoalNode, KnowledgeBase, TemporalAnnotation};

pub const NASU_2015: &str = include_str!("../fixtures/nasu_2015.toml");
pub const NASU_BASE: &str = include_str!("../fixtures/nasu_base.toml");

pub fn nasu_2015() -> KnowledgeBase {
    load_kb(NASU_2015).expect("bundled fixture is valid")
}

pub fn nasu_base() -> KnowledgeBase {
    load_kb(NASU_BASE).expect("bundled fixture is valid")
}

/// Rectangular burst added on top of the noise floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start_day: usize,
    pub days: usize,
    pub height: u64,
}

/// Poisson noise with mean `noise_mean` over `range`, plus `bursts`.
pub fn synthetic_series(
    seed: u64,
    component_id: u32,
    range: DateRange,
    noise_mean: f64,
    bursts: &[Burst],
) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Poisson::new(noise_mean).expect("noise mean is positive");
    let mut values: Vec<u64> = (0..range.day_count()).map(|_| noise.sample(&mut rng) as u64).collect();
    for b in bursts {
        let end = (b.start_day + b.days).min(values.len());
        for v in &mut values[b.start_day.min(end)..end] {
            *v += b.height;
        }
    }
    TimeSeries::new(component_id, range.start, values)
}

pub const BURST_WINDOW_START: &str = "2015-07-01";
pub const BURST_WINDOW_DAYS: usize = 184;
pub const BURST_NOISE_MEAN: f64 = 2.0;
/// Day 152 of the window is 2015-11-30.
pub const BURST: Burst = Burst {
    start_day: 152,
    days: 14,
    height: 40,
};

/// Second half of 2015 for component 14 with one 14-day burst at day 152.
pub fn synthetic_burst(seed: u64) -> TimeSeries {
    let start: NaiveDate = BURST_WINDOW_START.parse().expect("constant date");
    let range =
        DateRange::new(start, crate::calendar::add_days(start, BURST_WINDOW_DAYS as u64 - 1)).expect("forward range");
    synthetic_series(seed, 14, range, BURST_NOISE_MEAN, &[BURST])
}

/// Random valid hierarchy of `2..=max_nodes` nodes rooted at 0.
///
/// Every non-root node gets one parent with a smaller id, so the graph is a
/// DAG reachable from the root; nodes that end up with children are goals
/// and may receive extra edges to later nodes, which creates shared
/// sub-goals. About a third of the projects carry annotations in 2013–2016,
/// and some edge weights are zero (never all under one parent).
pub fn random_kb(seed: u64, max_nodes: usize) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes.max(2));
    let mut children: Vec<Vec<NodeLink>> = vec![Vec::new(); n];
    for j in 1..n {
        let p = rng.random_range(0..j);
        children[p].push(NodeLink {
            id: j,
            weight: rng.random_range(0.05..5.0),
        });
    }
    for (i, links) in children.iter_mut().enumerate() {
        if links.is_empty() {
            continue;
        }
        for j in i + 1..n {
            if rng.random_bool(0.15) && !links.iter().any(|c| c.id == j) {
                let weight = if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.05..5.0)
                };
                links.push(NodeLink { id: j, weight });
            }
        }
    }

    let nodes = children.into_iter().enumerate().map(|(i, links)| {
        let id = i as u32;
        if links.is_empty() {
            let mut p = GoalNode::project(id, format!("project {id}"), rng.random_range(0.0..=1.0));
            if rng.random_bool(0.1) {
                p.implementation_degree = Some(0.0);
            }
            if rng.random_bool(0.33) {
                for _ in 0..rng.random_range(1..=2) {
                    let onset = crate::calendar::add_days(
                        NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid"),
                        rng.random_range(0..4 * 365),
                    );
                    let ann = TemporalAnnotation::new(onset, rng.random_range(1..=30), rng.random_range(0..=12))
                        .expect("positive duration");
                    p.annotations.push(ann);
                }
            }
            p
        } else {
            let links = links
                .into_iter()
                .map(|l| ChildLink {
                    id: l.id as u32,
                    weight: l.weight,
                })
                .collect();
            GoalNode::goal(id, format!("goal {id}"), links)
        }
    });
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("title".to_string(), format!("random hierarchy {seed}"));
    KnowledgeBase::new(0, nodes, meta).expect("generated hierarchy is valid")
}

#[derive(Clone, Copy)]
struct NodeLink {
    id: usize,
    weight: f64,
}
