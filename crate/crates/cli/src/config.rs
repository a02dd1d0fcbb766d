use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use iopscope_core::calendar::DateRange;
use iopscope_core::detect::DetectionConfig;
use iopscope_core::ingest::{load_manifest, QueryManifest};
use iopscope_core::kb::{load_kb, KnowledgeBase, NodeId};
use iopscope_core::review::DelayTable;
use iopscope_core::scoring::DEFAULT_TOLERANCE;
use iopscope_core::wavelet::DEFAULT_OMEGA0;
use iopscope_core::Workspace;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SEED: u64 = 2019;

#[derive(Debug, Parser)]
#[command(
    name = "iopscope",
    version,
    about = "Detect information throw-ins and score goal achievement"
)]
pub struct Cli {
    #[command(flatten)]
    pub opts: Opts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Normalize the manifest's series into the workspace.
    Ingest,
    /// Compute spectrograms and detections for every component and period.
    Analyze,
    /// Append accepted detections to the knowledge base.
    Annotate,
    /// Score the goal over the periods and write the report.
    Score,
    /// Render the stored report as markdown.
    Report,
    /// Serve the HTTP API over the knowledge base and workspace.
    Serve,
    /// Generate the synthetic walkthrough and run the whole pipeline on it.
    Demo,
}

/// Flags shared by all subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// TOML run configuration.
    #[arg(long, global = true, env = "IOPSCOPE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "IOPSCOPE_KB")]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true, env = "IOPSCOPE_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Directory holding one `<label>.csv` per manifest entry.
    #[arg(long, global = true, env = "IOPSCOPE_SERIES_DIR")]
    pub series_dir: Option<PathBuf>,
    /// Comma-separated START..END periods; the last one is the partial period.
    #[arg(long, global = true, env = "IOPSCOPE_PERIODS", value_delimiter = ',')]
    pub periods: Option<Vec<DateRange>>,
    /// Workspace directory.
    #[arg(long, global = true, env = "IOPSCOPE_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "IOPSCOPE_OMEGA0")]
    pub omega0: Option<f64>,
    #[arg(long, global = true, env = "IOPSCOPE_THRESHOLD_K")]
    pub threshold_k: Option<f64>,
    /// Extrapolation factor for the last period.
    #[arg(long, global = true, env = "IOPSCOPE_FACTOR")]
    pub factor: Option<f64>,
    /// Ask for a decision on each detection.
    #[arg(long, global = true, env = "IOPSCOPE_INTERACTIVE")]
    pub interactive: bool,
    #[arg(long, global = true, env = "IOPSCOPE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "IOPSCOPE_PORT")]
    pub port: Option<u16>,
    #[arg(long, global = true, env = "IOPSCOPE_BIND")]
    pub bind: Option<IpAddr>,
    /// Impact delay table (TOML).
    #[arg(long, global = true, env = "IOPSCOPE_DELAYS")]
    pub delays: Option<PathBuf>,
    /// Per-period scores to use instead of scoring the knowledge base.
    #[arg(long, global = true, env = "IOPSCOPE_SCORES")]
    pub scores: Option<PathBuf>,
    /// Goal to score; defaults to the root.
    #[arg(long, global = true, env = "IOPSCOPE_GOAL")]
    pub goal: Option<NodeId>,
    #[arg(long, global = true, env = "IOPSCOPE_TOLERANCE")]
    pub tolerance: Option<f64>,
}

/// Config file layout. Relative paths are resolved against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    kb: Option<PathBuf>,
    manifest: Option<PathBuf>,
    series_dir: Option<PathBuf>,
    periods: Option<Vec<String>>,
    out: Option<PathBuf>,
    omega0: Option<f64>,
    factor: Option<f64>,
    interactive: Option<bool>,
    seed: Option<u64>,
    port: Option<u16>,
    bind: Option<IpAddr>,
    delays: Option<PathBuf>,
    scores: Option<PathBuf>,
    goal: Option<NodeId>,
    tolerance: Option<f64>,
    detection: Option<DetectionConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kb: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub series_dir: Option<PathBuf>,
    pub periods: Option<Vec<DateRange>>,
    pub out: PathBuf,
    pub omega0: f64,
    pub detection: DetectionConfig,
    pub factor: Option<f64>,
    pub interactive: bool,
    pub seed: u64,
    pub port: u16,
    pub bind: IpAddr,
    pub delays: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub goal: Option<NodeId>,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kb: None,
            manifest: None,
            series_dir: None,
            periods: None,
            out: PathBuf::from("out"),
            omega0: DEFAULT_OMEGA0,
            detection: DetectionConfig::default(),
            factor: None,
            interactive: false,
            seed: DEFAULT_SEED,
            port: DEFAULT_PORT,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            delays: None,
            scores: None,
            goal: None,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Periods must be sorted and pairwise disjoint.
pub fn check_periods(periods: &[DateRange]) -> Result<(), CliError> {
    if periods.is_empty() {
        return Err(CliError::config("at least one period is required"));
    }
    for pair in periods.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(CliError::config(format!(
                "periods must be sorted and non-overlapping: {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Config file (if any) overlaid with the flags.
    pub fn resolve(opts: &Opts) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = &opts.config {
            let text = read_text(path)?;
            let file: FileConfig =
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.apply_file(file, base)?;
        }
        let pick = |flag: &Option<PathBuf>, current: &mut Option<PathBuf>| {
            if flag.is_some() {
                current.clone_from(flag);
            }
        };
        pick(&opts.kb, &mut cfg.kb);
        pick(&opts.manifest, &mut cfg.manifest);
        pick(&opts.series_dir, &mut cfg.series_dir);
        pick(&opts.delays, &mut cfg.delays);
        pick(&opts.scores, &mut cfg.scores);
        if let Some(out) = &opts.out {
            cfg.out.clone_from(out);
        }
        if let Some(p) = &opts.periods {
            cfg.periods = Some(p.clone());
        }
        if let Some(w) = opts.omega0 {
            cfg.omega0 = w;
        }
        if let Some(k) = opts.threshold_k {
            cfg.detection.threshold_k = k;
        }
        cfg.factor = opts.factor.or(cfg.factor);
        cfg.interactive |= opts.interactive;
        cfg.seed = opts.seed.unwrap_or(cfg.seed);
        cfg.port = opts.port.unwrap_or(cfg.port);
        cfg.bind = opts.bind.unwrap_or(cfg.bind);
        cfg.goal = opts.goal.or(cfg.goal);
        cfg.tolerance = opts.tolerance.unwrap_or(cfg.tolerance);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, file: FileConfig, base: &Path) -> Result<(), CliError> {
        let rel = |p: Option<PathBuf>| p.map(|p| base.join(p));
        self.kb = rel(file.kb);
        self.manifest = rel(file.manifest);
        self.series_dir = rel(file.series_dir);
        self.delays = rel(file.delays);
        self.scores = rel(file.scores);
        if let Some(out) = rel(file.out) {
            self.out = out;
        }
        if let Some(periods) = file.periods {
            let parsed = periods
                .iter()
                .map(|s| s.parse::<DateRange>().map_err(CliError::config))
                .collect::<Result<Vec<_>, _>>()?;
            self.periods = Some(parsed);
        }
        if let Some(d) = file.detection {
            self.detection = d;
        }
        self.omega0 = file.omega0.unwrap_or(self.omega0);
        self.factor = file.factor;
        self.interactive = file.interactive.unwrap_or(false);
        self.seed = file.seed.unwrap_or(self.seed);
        self.port = file.port.unwrap_or(self.port);
        self.bind = file.bind.unwrap_or(self.bind);
        self.goal = file.goal;
        self.tolerance = file.tolerance.unwrap_or(self.tolerance);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = &self.periods {
            check_periods(p)?;
        }
        self.detection.validate().map_err(CliError::from)?;
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(CliError::config(format!(
                "omega0 must be positive, got {}",
                self.omega0
            )));
        }
        if let Some(f) = self.factor {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(CliError::config(format!("factor must be at least 1, got {f}")));
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(CliError::config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.out)
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::config(format!("--{flag} is required")))
    }

    pub fn kb_path(&self) -> Result<&Path, CliError> {
        Self::required(&self.kb, "kb")
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase, CliError> {
        let path = self.kb_path()?;
        load_kb(&read_text(path)?).map_err(|e| CliError::from(e).context(path.display().to_string()))
    }

    pub fn load_kb_if_given(&self) -> Result<Option<KnowledgeBase>, CliError> {
        self.kb.as_ref().map(|_| self.load_kb()).transpose()
    }

    pub fn load_manifest(&self) -> Result<Option<QueryManifest>, CliError> {
        let Some(path) = &self.manifest else { return Ok(None) };
        let manifest =
            load_manifest(&read_text(path)?).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
        Ok(Some(manifest))
    }

    pub fn series_dir(&self) -> Result<&Path, CliError> {
        Self::required(&self.series_dir, "series-dir")
    }

    pub fn load_delays(&self) -> Result<DelayTable, CliError> {
        match &self.delays {
            Some(path) => {
                DelayTable::parse(&read_text(path)?).map_err(|e| CliError::from(e).context(path.display().to_string()))
            }
            None => Ok(DelayTable::default()),
        }
    }

    /// Configured periods, else the manifest period split at year boundaries.
    pub fn periods(&self) -> Result<Vec<DateRange>, CliError> {
        if let Some(p) = &self.periods {
            return Ok(p.clone());
        }
        match self.load_manifest()? {
            Some(m) => Ok(m.period.split_by_year()),
            None => Err(CliError::config("--periods or --manifest is required")),
        }
    }
}
