//! Synthetic walkthrough: the base hierarchy, fifteen monitored components
//! over 2013-01-01..2019-07-10 and a throw-in layout that reproduces the
//! 2015 annotations of the bundled fixture.

use std::fmt;
use std::path::PathBuf;

use chrono::{Datelike, NaiveDate};
use iopscope_core::calendar::DateRange;
use iopscope_core::export::write_atomic;
use iopscope_core::fixtures::{self, Burst};
use iopscope_core::ingest::{save_manifest, ManifestEntry, QueryManifest};
use iopscope_core::kb::{save_kb, KnowledgeBase, NodeId};
use iopscope_core::review::{DelayEntry, DelayTable};
use iopscope_core::scoring::AchievementReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{self, AnalyzeSummary, AnnotateSummary, IngestSummary};
use crate::config::RunConfig;
use crate::error::CliError;

pub const DEMO_PERIOD: &str = "2013-01-01..2019-07-10";
pub const NOISE_MEAN: f64 = 2.0;
pub const BURST_HEIGHT: u64 = 40;
pub const DEFAULT_DELAY_MONTHS: u32 = 6;
/// Chance that a component has a throw-in in a given year other than 2015.
pub const YEARLY_BURST_PROB: f64 = 0.6;
/// Projects the monitoring does not cover (not one of the fifteen components).
pub const UNMONITORED: [NodeId; 1] = [4];
/// Components that stay quiet for the whole period.
pub const QUIET: [NodeId; 2] = [13, 23];

/// Monitored components of the base hierarchy.
pub fn components(kb: &KnowledgeBase) -> Vec<NodeId> {
    kb.projects()
        .map(|n| n.id)
        .filter(|id| !UNMONITORED.contains(id))
        .collect()
}

/// 2015 throw-ins of the fixture as (component, onset, days, delay months).
pub fn fixture_throwins() -> Vec<(NodeId, NaiveDate, u32, u32)> {
    let kb = fixtures::nasu_2015();
    let mut out: Vec<_> = kb
        .projects()
        .flat_map(|n| {
            let component = n.clone_of.unwrap_or(n.id);
            n.annotations
                .iter()
                .map(move |a| (component, a.onset, a.duration_days, a.impact_delay_months))
        })
        .collect();
    out.sort_by_key(|&(c, onset, ..)| (onset, c));
    out
}

pub fn delay_table() -> DelayTable {
    DelayTable {
        default_months: Some(DEFAULT_DELAY_MONTHS),
        entries: fixture_throwins()
            .into_iter()
            .map(|(component, onset, _, months)| DelayEntry {
                component,
                months,
                onset: Some(onset),
            })
            .collect(),
    }
}

fn day_index(range: &DateRange, date: NaiveDate) -> usize {
    (date - range.start).num_days() as usize
}

/// Burst layout per component: the fixture's 2015 throw-ins plus seeded
/// single throw-ins in other years.
pub fn burst_plan(seed: u64, components: &[NodeId], range: &DateRange) -> Vec<(NodeId, Vec<Burst>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let throwins = fixture_throwins();
    components
        .iter()
        .map(|&c| {
            let mut bursts: Vec<Burst> = throwins
                .iter()
                .filter(|t| t.0 == c)
                .map(|&(_, onset, days, _)| Burst {
                    start_day: day_index(range, onset),
                    days: days as usize,
                    height: BURST_HEIGHT,
                })
                .collect();
            for year in range.split_by_year() {
                let hit = rng.random_bool(YEARLY_BURST_PROB);
                let offset = rng.random_range(40..year.day_count() - 60);
                let days = rng.random_range(7..=15);
                if QUIET.contains(&c) || year.start.year() == 2015 || !hit {
                    continue;
                }
                bursts.push(Burst {
                    start_day: day_index(range, year.start) + offset,
                    days,
                    height: BURST_HEIGHT,
                });
            }
            bursts.sort_by_key(|b| b.start_day);
            (c, bursts)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub inputs: PathBuf,
    pub ingest: IngestSummary,
    pub analyze: AnalyzeSummary,
    pub annotate: AnnotateSummary,
    pub report: AchievementReport,
    pub markdown: String,
}

impl fmt::Display for DemoSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "inputs written to {}", self.inputs.display())?;
        write!(f, "{}{}", self.ingest, self.analyze)?;
        writeln!(f, "{}\n", self.annotate)?;
        f.write_str(&self.markdown)
    }
}

fn write(path: PathBuf, text: &str) -> Result<(), CliError> {
    write_atomic(&path, text.as_bytes())?;
    Ok(())
}

/// Writes the synthetic inputs under `<out>/inputs` and runs every stage.
/// Analysis, detection and scoring settings come from `cfg`; input paths
/// and periods are fixed.
pub fn cmd_demo(cfg: &RunConfig) -> Result<DemoSummary, CliError> {
    let range: DateRange = DEMO_PERIOD.parse().expect("constant range");
    let base = fixtures::nasu_base();
    let ids = components(&base);
    let inputs = cfg.out.join("inputs");

    let manifest = QueryManifest {
        period: range,
        entries: ids
            .iter()
            .map(|&id| ManifestEntry {
                component_id: id,
                query: base.nodes[&id].formulation.clone(),
                label: format!("c{id}"),
            })
            .collect(),
    };
    write(inputs.join("kb.toml"), &save_kb(&base))?;
    write(inputs.join("manifest.toml"), &save_manifest(&manifest))?;
    write(inputs.join("delays.toml"), &delay_table().to_toml())?;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = burst_plan(seeds.random(), &ids, &range);
    for (id, bursts) in &plan {
        let series = fixtures::synthetic_series(seeds.random(), *id, range, NOISE_MEAN, bursts);
        write(inputs.join("series").join(format!("c{id}.csv")), &series.to_csv())?;
    }
    let kb_path = cfg.out.join("kb.toml");
    write(kb_path.clone(), &save_kb(&base))?;

    let run = RunConfig {
        kb: Some(kb_path),
        manifest: Some(inputs.join("manifest.toml")),
        series_dir: Some(inputs.join("series")),
        periods: None,
        delays: Some(inputs.join("delays.toml")),
        scores: None,
        goal: None,
        interactive: false,
        ..cfg.clone()
    };
    let ingest = commands::cmd_ingest(&run)?;
    let analyze = commands::cmd_analyze(&run)?;
    let annotate = commands::cmd_annotate(&run)?;
    let report = commands::cmd_score(&run)?;
    let markdown = commands::cmd_report(&run)?;
    Ok(DemoSummary {
        inputs,
        ingest,
        analyze,
        annotate,
        report,
        markdown,
    })
}
