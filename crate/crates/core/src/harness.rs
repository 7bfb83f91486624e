//! Experiment driver: fixture build, run, score, analyze.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/traces/<spec>.jsonl
//! ```
//!
//! Scoring writes `leaderboard.csv`, `murphy.json`, `per_category.csv`,
//! `forecasts.jsonl` and `summary.json`; analysis reads the last two and
//! writes `analysis.json`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::llm::{LlmBackend, LlmConfig};
use crate::agents::synthetic::{SyntheticAgentParams, SyntheticBackend};
use crate::agents::{AgentBackend, MarketTask};
use crate::engine::{run, ExecutionTrace, FinalProbability};
use crate::fixture::{
    apply_filters, baseline_price, read_markets, stratified_sample, synthetic_pool, write_markets, Category,
    Market, SampleOptions, SyntheticPoolParams,
};
use crate::reference::{build_reference, ConfigParams, REFERENCE_NAMES};
use crate::scoring::{alpha, brier, itt_adjust, murphy, per_category, Binning, ForecastRecord, ForecastSet};
use crate::seed::{derive_seed, sha256_hex};
use crate::spec::CoordinationSpec;
use crate::stats::{
    bootstrap, disagreement_top_k, paired_t, pareto_frontier, required_n, type_sm, BootstrapResult,
    Disagreement, PairedSample, ParetoPoint, TTest, TypeSM, ALPHA_TIERS, DEFAULT_POWER, DEFAULT_RESAMPLES,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";
/// Probability used for failed runs in the intention-to-treat convention.
pub const ITT_FALLBACK_P: f64 = 0.5;
pub const MURPHY_BINS: [usize; 3] = [5, 10, 20];
pub const DISAGREEMENT_TOP_K: usize = 5;
/// Pairs whose mean difference is below this are not sized.
pub const MIN_DETECTABLE_DIFF: f64 = 1e-4;
pub const MAX_SENSIBLE_N: u64 = 1_000_000;
pub const NOT_DETECTABLE: &str = "not meaningfully detectable";
pub const BASELINE_ROW: &str = "market_baseline";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid spec {name}: {message}")]
    Spec { name: String, message: String },
    #[error("fixture or spec changed since manifest ({0})")]
    ManifestMismatch(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("no traces found in {0}")]
    NoTraces(PathBuf),
    #[error("traces reference markets not in the fixture: {}", .0.join(", "))]
    OrphanTraces(Vec<String>),
    #[error("scoring: {0}")]
    Scoring(String),
    #[error("analysis needs at least two scored configs, found {0}")]
    TooFewConfigs(usize),
}

impl HarnessError {
    /// Stable machine-readable code.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Config(_) => "config",
            HarnessError::Spec { .. } => "spec",
            HarnessError::ManifestMismatch(_) => "manifest_mismatch",
            HarnessError::Backend(_) => "backend",
            HarnessError::Fixture(_) => "fixture",
            HarnessError::NoTraces(_) => "no_traces",
            HarnessError::OrphanTraces(_) => "orphan_traces",
            HarnessError::Scoring(_) => "scoring",
            HarnessError::TooFewConfigs(_) => "too_few_configs",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> HarnessError {
    HarnessError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub usd_per_1k_input: f64,
    pub usd_per_1k_output: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            usd_per_1k_input: 0.005,
            usd_per_1k_output: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Synthetic(SyntheticAgentParams),
    Llm(LlmConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Synthetic(SyntheticAgentParams::default())
    }
}

impl BackendConfig {
    /// Builds the backend with `rates` replacing its own price fields.
    pub fn build(&self, rates: CostRates) -> Result<Box<dyn AgentBackend>, HarnessError> {
        match self {
            BackendConfig::Synthetic(params) => {
                params.check().map_err(|e| HarnessError::Config(e.to_string()))?;
                let mut params = params.clone();
                params.usd_per_1k_input = rates.usd_per_1k_input;
                params.usd_per_1k_output = rates.usd_per_1k_output;
                Ok(Box::new(SyntheticBackend::new(params)))
            }
            BackendConfig::Llm(config) => {
                let mut config = config.clone();
                config.usd_per_1k_input = rates.usd_per_1k_input;
                config.usd_per_1k_output = rates.usd_per_1k_output;
                let backend = LlmBackend::from_env(config).map_err(|e| HarnessError::Backend(e.message))?;
                Ok(Box::new(backend))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fixture: PathBuf,
    /// Reference names, or paths to spec documents (`*.toml`).
    #[serde(default = "all_reference_names")]
    pub specs: Vec<String>,
    #[serde(default)]
    pub backend: BackendConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub reference_params: ConfigParams,
    #[serde(default)]
    pub cost_rates: CostRates,
}

pub fn all_reference_names() -> Vec<String> {
    REFERENCE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn is_spec_path(entry: &str) -> bool {
    entry.ends_with(".toml") || entry.contains('/') || entry.contains('\\')
}

impl ExperimentConfig {
    pub fn new(fixture: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            fixture: fixture.into(),
            specs: all_reference_names(),
            backend: BackendConfig::default(),
            seed,
            out_dir: out_dir.into(),
            workers: default_workers(),
            reference_params: ConfigParams::default(),
            cost_rates: CostRates::default(),
        }
    }

    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        let mut config: ExperimentConfig = toml::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        config.fixture = resolve(&config.fixture);
        config.out_dir = resolve(&config.out_dir);
        for s in &mut config.specs {
            if is_spec_path(s) {
                *s = resolve(Path::new(s)).to_string_lossy().into_owned();
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.fixture.is_file() {
            return Err(HarnessError::Config(format!("fixture {} does not exist", self.fixture.display())));
        }
        if self.specs.is_empty() {
            return Err(HarnessError::Config("no specs listed".into()));
        }
        for s in &self.specs {
            if is_spec_path(s) && !Path::new(s).is_file() {
                return Err(HarnessError::Config(format!("spec file {s} does not exist")));
            }
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be positive".into()));
        }
        for v in [self.cost_rates.usd_per_1k_input, self.cost_rates.usd_per_1k_output] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HarnessError::Config("cost rates must be finite and non-negative".into()));
            }
        }
        self.reference_params
            .check()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Resolves every entry to a validated spec plus the hash of its document.
    pub fn load_specs(&self) -> Result<Vec<(CoordinationSpec, String)>, HarnessError> {
        let mut out: Vec<(CoordinationSpec, String)> = Vec::new();
        for entry in &self.specs {
            let (spec, digest) = if is_spec_path(entry) {
                let path = Path::new(entry);
                let text = read_text(path)?;
                let spec = CoordinationSpec::from_toml(&text).map_err(|e| parse_err(path, e))?;
                (spec, sha256_hex(text.as_bytes()))
            } else {
                let spec = build_reference(entry, &self.reference_params).map_err(|e| HarnessError::Spec {
                    name: entry.clone(),
                    message: e.to_string(),
                })?;
                let doc = spec.to_toml().map_err(|e| HarnessError::Spec {
                    name: entry.clone(),
                    message: e.to_string(),
                })?;
                (spec, sha256_hex(doc.as_bytes()))
            };
            let report = spec.validate();
            if !report.is_ok() {
                return Err(HarnessError::Spec {
                    name: spec.name.clone(),
                    message: report.to_string(),
                });
            }
            if out.iter().any(|(s, _)| s.name == spec.name) {
                return Err(HarnessError::Config(format!("spec name {} listed twice", spec.name)));
            }
            out.push((spec, digest));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDigest {
    pub name: String,
    pub sha256: String,
}

/// Written before the first agent call and checked on every resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixture_sha256: String,
    pub n_markets: usize,
    pub specs: Vec<SpecDigest>,
    pub seed: u64,
    pub backend_sha256: String,
    pub created_at: String,
}

impl Manifest {
    /// First field that differs, ignoring the timestamp.
    pub fn mismatch(&self, other: &Manifest) -> Option<&'static str> {
        if self.fixture_sha256 != other.fixture_sha256 || self.n_markets != other.n_markets {
            Some("fixture")
        } else if self.specs != other.specs {
            Some("specs")
        } else if self.seed != other.seed {
            Some("seed")
        } else if self.backend_sha256 != other.backend_sha256 {
            Some("backend")
        } else {
            None
        }
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))
    }
}

/// Per-cell seed. It depends on the market only, so every spec sees the
/// same agent draws on the same market.
pub fn cell_seed(root: u64, market_id: &str) -> u64 {
    derive_seed(root, &format!("market/{market_id}"))
}

pub fn trace_path(out_dir: &Path, spec_name: &str) -> PathBuf {
    out_dir.join(TRACE_DIR).join(format!("{spec_name}.jsonl"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub new_records: usize,
    pub skipped: usize,
    pub total: usize,
}

/// Valid traces for this spec and fixture, in file order. Unparsable lines
/// (an interrupted write) are dropped.
fn load_existing(path: &Path, spec_name: &str, index: &HashMap<&str, usize>) -> Result<(Vec<ExecutionTrace>, bool), HarnessError> {
    if !path.exists() {
        return Ok((Vec::new(), false));
    }
    let text = read_text(path)?;
    let mut traces = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dirty = false;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match ExecutionTrace::from_json_line(line) {
            Ok(t) if t.spec_name == spec_name && index.contains_key(t.market_id.as_str()) => {
                if seen.insert(t.market_id.clone()) {
                    traces.push(t);
                } else {
                    dirty = true;
                }
            }
            Ok(t) if t.spec_name != spec_name => {
                return Err(parse_err(path, format!("trace for spec {} in file of {spec_name}", t.spec_name)));
            }
            Ok(t) => return Err(HarnessError::OrphanTraces(vec![t.market_id])),
            Err(_) => dirty = true,
        }
    }
    Ok((traces, dirty))
}

fn write_sorted(path: &Path, mut traces: Vec<ExecutionTrace>, index: &HashMap<&str, usize>) -> Result<(), HarnessError> {
    traces.sort_by_key(|t| index[t.market_id.as_str()]);
    let mut text = String::new();
    for t in &traces {
        text.push_str(&t.to_json_line());
        text.push('\n');
    }
    write_file(path, text)
}

/// Runs every (spec, market) cell not already traced, then rewrites each
/// trace file in fixture order.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let fixture_bytes = read_bytes(&config.fixture)?;
    let markets = read_markets(&config.fixture).map_err(|e| HarnessError::Fixture(e.to_string()))?;
    if markets.is_empty() {
        return Err(HarnessError::Fixture("fixture is empty".into()));
    }
    let index: HashMap<&str, usize> = markets.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect();
    if index.len() != markets.len() {
        return Err(HarnessError::Fixture("duplicate market ids".into()));
    }
    let specs = config.load_specs()?;
    let backend_doc = serde_json::to_string(&(&config.backend, &config.cost_rates)).expect("backend serializes");

    let manifest = Manifest {
        fixture_sha256: sha256_hex(&fixture_bytes),
        n_markets: markets.len(),
        specs: specs
            .iter()
            .map(|(s, digest)| SpecDigest {
                name: s.name.clone(),
                sha256: digest.clone(),
            })
            .collect(),
        seed: config.seed,
        backend_sha256: sha256_hex(backend_doc.as_bytes()),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let previous = Manifest::read(&manifest_path)?;
        if let Some(field) = previous.mismatch(&manifest) {
            return Err(HarnessError::ManifestMismatch(field.to_string()));
        }
    } else {
        // Traces without a manifest cannot be trusted for resume.
        for (spec, _) in &specs {
            let path = trace_path(&config.out_dir, &spec.name);
            if path.exists() {
                return Err(HarnessError::ManifestMismatch(format!("{} exists without a manifest", path.display())));
            }
        }
        write_json(&manifest_path, &manifest)?;
    }

    let tasks: Vec<MarketTask> = markets
        .iter()
        .map(|m| MarketTask::new(m.clone()).map_err(|e| HarnessError::Fixture(format!("{}: {e}", m.id))))
        .collect::<Result<_, _>>()?;

    let mut existing = Vec::with_capacity(specs.len());
    let mut cells = Vec::new();
    let mut skipped = 0;
    for (si, (spec, _)) in specs.iter().enumerate() {
        let path = trace_path(&config.out_dir, &spec.name);
        let (traces, dirty) = load_existing(&path, &spec.name, &index)?;
        if dirty {
            write_sorted(&path, traces.clone(), &index)?;
        }
        let done: BTreeSet<&str> = traces.iter().map(|t| t.market_id.as_str()).collect();
        skipped += done.len();
        for (mi, m) in markets.iter().enumerate() {
            if !done.contains(m.id.as_str()) {
                cells.push((si, mi));
            }
        }
        existing.push(traces.len());
    }

    let trace_dir = config.out_dir.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;
    let writers: Vec<Mutex<File>> = specs
        .iter()
        .map(|(spec, _)| {
            let path = trace_path(&config.out_dir, &spec.name);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map(Mutex::new)
                .map_err(io_err(&path))
        })
        .collect::<Result<_, _>>()?;

    let backend = config.backend.build(config.cost_rates)?;
    let backend: &dyn AgentBackend = backend.as_ref();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| {
        cells.par_iter().try_for_each(|&(si, mi)| {
            let spec = &specs[si].0;
            let task = &tasks[mi];
            let trace = run(spec, backend, task, cell_seed(config.seed, &task.market.id)).map_err(|e| {
                HarnessError::Spec {
                    name: spec.name.clone(),
                    message: e.to_string(),
                }
            })?;
            let mut line = trace.to_json_line();
            line.push('\n');
            let mut file = writers[si].lock().expect("trace writer lock");
            file.write_all(line.as_bytes())
                .map_err(io_err(&trace_path(&config.out_dir, &spec.name)))
        })
    })?;
    drop(writers);

    let mut total = 0;
    for (spec, _) in &specs {
        let path = trace_path(&config.out_dir, &spec.name);
        let (traces, _) = load_existing(&path, &spec.name, &index)?;
        total += traces.len();
        write_sorted(&path, traces, &index)?;
    }
    Ok(RunSummary {
        new_records: cells.len(),
        skipped,
        total,
    })
}

/// One row of `leaderboard.csv`. Empty cells mean the config has no
/// successful forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub config: String,
    pub brier: Option<f64>,
    pub alpha: Option<f64>,
    pub sem_alpha: Option<f64>,
    pub rel: Option<f64>,
    pub res: Option<f64>,
    pub unc: Option<f64>,
    pub tokens_per_market: f64,
    pub cost_per_market: f64,
    pub n_failures: usize,
    pub brier_itt: f64,
}

pub const LEADERBOARD_COLUMNS: [&str; 11] = [
    "config",
    "brier",
    "alpha",
    "sem_alpha",
    "rel",
    "res",
    "unc",
    "tokens_per_market",
    "cost_per_market",
    "n_failures",
    "brier_itt",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl LeaderboardRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.config.clone(),
            cell(self.brier),
            cell(self.alpha),
            cell(self.sem_alpha),
            cell(self.rel),
            cell(self.res),
            cell(self.unc),
            format!("{:.1}", self.tokens_per_market),
            format!("{:.6}", self.cost_per_market),
            self.n_failures.to_string(),
            format!("{:.6}", self.brier_itt),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastLine {
    pub config: String,
    #[serde(flatten)]
    pub record: ForecastRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub n_traces: usize,
    pub n_failures: usize,
    pub brier: Option<f64>,
    pub tokens_per_market: f64,
    pub cost_per_market: f64,
}

/// Read by the analysis step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub seed: u64,
    pub fixture_sha256: String,
    pub n_markets: usize,
    pub configs: Vec<ConfigSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyEntry {
    pub config: String,
    /// Keyed by binning, then bin count; absent when there is nothing to score.
    pub reports: BTreeMap<String, BTreeMap<usize, crate::scoring::MurphyReport>>,
}

fn murphy_grid(set: &ForecastSet) -> BTreeMap<String, BTreeMap<usize, crate::scoring::MurphyReport>> {
    let mut out = BTreeMap::new();
    for (label, binning) in [("fixed", Binning::FixedDeciles), ("equal_mass", Binning::EqualMass)] {
        let mut by_k = BTreeMap::new();
        for k in MURPHY_BINS {
            if let Ok(r) = murphy(set, k, binning) {
                by_k.insert(k, r);
            }
        }
        out.insert(label.to_string(), by_k);
    }
    out
}

fn scoring_err(e: impl ToString) -> HarnessError {
    HarnessError::Scoring(e.to_string())
}

fn load_traces(run_dir: &Path) -> Result<Vec<ExecutionTrace>, HarnessError> {
    let dir = run_dir.join(TRACE_DIR);
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    let mut traces = Vec::new();
    for path in files {
        for (i, line) in read_text(&path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t = ExecutionTrace::from_json_line(line).map_err(|e| parse_err(&path, format!("line {}: {e}", i + 1)))?;
            traces.push(t);
        }
    }
    if traces.is_empty() {
        return Err(HarnessError::NoTraces(dir));
    }
    Ok(traces)
}

fn record_for(trace: &ExecutionTrace, market: &Market) -> Result<ForecastRecord, HarnessError> {
    let y = market
        .outcome_value()
        .ok_or_else(|| HarnessError::Fixture(format!("market {} is unresolved", market.id)))?;
    let (p, fallback) = match trace.final_probability {
        FinalProbability::Value(p) => (p, false),
        FinalProbability::Fallback(p) => (p, true),
        FinalProbability::Missing => (ITT_FALLBACK_P, true),
    };
    Ok(ForecastRecord {
        fallback,
        ..ForecastRecord::new(&market.id, p, y, market.category)
    })
}

fn category_csv(table: &crate::scoring::CategoryTable, convention: &str, rows: &mut Vec<Vec<String>>) {
    let cats = Category::alphabetical();
    for config in &table.configs {
        let mut row = vec![config.clone(), convention.to_string()];
        row.extend(cats.iter().map(|c| cell(table.get(config, *c))));
        row.push(cell(table.overall.get(config).copied()));
        rows.push(row);
    }
    let mut spread = vec!["spread".to_string(), convention.to_string()];
    spread.extend(cats.iter().map(|c| cell(table.spread(*c))));
    let overall: Vec<f64> = table.overall.values().copied().collect();
    let overall_spread = if overall.is_empty() {
        None
    } else {
        let hi = overall.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = overall.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    };
    spread.push(cell(overall_spread));
    rows.push(spread);
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| parse_err(path, e);
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| parse_err(path, e))?;
    write_file(path, bytes)
}

/// Scores the traces under `run_dir` against `fixture` into `out_dir`.
pub fn cmd_score(run_dir: &Path, fixture: &Path, out_dir: &Path) -> Result<Vec<LeaderboardRow>, HarnessError> {
    let fixture_bytes = read_bytes(fixture)?;
    let markets = read_markets(fixture).map_err(|e| HarnessError::Fixture(e.to_string()))?;
    let by_id: HashMap<&str, (usize, &Market)> = markets.iter().enumerate().map(|(i, m)| (m.id.as_str(), (i, m))).collect();
    let traces = load_traces(run_dir)?;

    let orphans: BTreeSet<&str> = traces
        .iter()
        .map(|t| t.market_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !orphans.is_empty() {
        return Err(HarnessError::OrphanTraces(orphans.into_iter().map(String::from).collect()));
    }

    let manifest_path = run_dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(Manifest::read(&manifest_path)?)
    } else {
        None
    };
    let mut order: Vec<String> = manifest
        .as_ref()
        .map(|m| m.specs.iter().map(|s| s.name.clone()).collect())
        .unwrap_or_default();
    let mut grouped: BTreeMap<String, Vec<&ExecutionTrace>> = BTreeMap::new();
    for t in &traces {
        grouped.entry(t.spec_name.clone()).or_default().push(t);
    }
    order.retain(|name| grouped.contains_key(name));
    for name in grouped.keys() {
        if !order.contains(name) {
            order.push(name.clone());
        }
    }

    let baseline_records: Vec<ForecastRecord> = markets
        .iter()
        .map(|m| {
            let q = baseline_price(m).map_err(|e| HarnessError::Fixture(e.to_string()))?;
            let y = m
                .outcome_value()
                .ok_or_else(|| HarnessError::Fixture(format!("market {} is unresolved", m.id)))?;
            Ok(ForecastRecord::new(&m.id, q, y, m.category))
        })
        .collect::<Result<_, HarnessError>>()?;
    let baseline = ForecastSet::new(baseline_records).map_err(scoring_err)?;

    let mut rows = Vec::new();
    let mut murphy_entries = Vec::new();
    let mut forecast_lines = String::new();
    let mut summaries = Vec::new();
    let mut success_sets = BTreeMap::new();
    let mut itt_sets = BTreeMap::new();
    for name in &order {
        let mut group = grouped[name].clone();
        group.sort_by_key(|t| by_id[t.market_id.as_str()].0);
        let records: Vec<ForecastRecord> = group
            .iter()
            .map(|t| record_for(t, by_id[t.market_id.as_str()].1))
            .collect::<Result<_, _>>()?;
        let all = ForecastSet::new(records).map_err(scoring_err)?;
        for r in all.records() {
            let line = ForecastLine {
                config: name.clone(),
                record: r.clone(),
            };
            forecast_lines.push_str(&serde_json::to_string(&line).expect("forecast serializes"));
            forecast_lines.push('\n');
        }
        let succ = all.successes();
        let n = group.len() as f64;
        let tokens_per_market = group.iter().map(|t| t.total_tokens as f64).sum::<f64>() / n;
        let cost_per_market = group.iter().map(|t| t.total_cost_usd).sum::<f64>() / n;
        let itt = itt_adjust(&all, ITT_FALLBACK_P).map_err(scoring_err)?;

        let (b, a, m10) = if succ.is_empty() {
            (None, None, None)
        } else {
            let ids = succ.market_ids();
            let base_sub = baseline.filter(|r| ids.contains(r.market_id.as_str()));
            (
                Some(brier(&succ).map_err(scoring_err)?),
                Some(alpha(&succ, &base_sub).map_err(scoring_err)?),
                Some(murphy(&succ, 10, Binning::FixedDeciles).map_err(scoring_err)?),
            )
        };
        rows.push(LeaderboardRow {
            config: name.clone(),
            brier: b,
            alpha: a.as_ref().map(|a| a.alpha),
            sem_alpha: a.as_ref().map(|a| a.sem_alpha),
            rel: m10.as_ref().map(|m| m.rel),
            res: m10.as_ref().map(|m| m.res),
            unc: m10.as_ref().map(|m| m.unc),
            tokens_per_market,
            cost_per_market,
            n_failures: itt.n_failures,
            brier_itt: itt.brier_itt,
        });
        summaries.push(ConfigSummary {
            config: name.clone(),
            n_traces: group.len(),
            n_failures: itt.n_failures,
            brier: b,
            tokens_per_market,
            cost_per_market,
        });
        murphy_entries.push(MurphyEntry {
            config: name.clone(),
            reports: murphy_grid(&succ),
        });
        let itt_records: Vec<ForecastRecord> = all
            .records()
            .iter()
            .map(|r| ForecastRecord {
                p: if r.fallback { ITT_FALLBACK_P } else { r.p },
                ..r.clone()
            })
            .collect();
        itt_sets.insert(name.clone(), ForecastSet::new(itt_records).map_err(scoring_err)?);
        success_sets.insert(name.clone(), succ);
    }

    let base_brier = brier(&baseline).map_err(scoring_err)?;
    let base_m = murphy(&baseline, 10, Binning::FixedDeciles).map_err(scoring_err)?;
    rows.push(LeaderboardRow {
        config: BASELINE_ROW.into(),
        brier: Some(base_brier),
        alpha: Some(0.0),
        sem_alpha: Some(0.0),
        rel: Some(base_m.rel),
        res: Some(base_m.res),
        unc: Some(base_m.unc),
        tokens_per_market: 0.0,
        cost_per_market: 0.0,
        n_failures: 0,
        brier_itt: base_brier,
    });
    murphy_entries.push(MurphyEntry {
        config: BASELINE_ROW.into(),
        reports: murphy_grid(&baseline),
    });

    let csv_rows: Vec<Vec<String>> = rows.iter().map(LeaderboardRow::fields).collect();
    write_csv(&out_dir.join("leaderboard.csv"), &LEADERBOARD_COLUMNS, &csv_rows)?;
    write_json(&out_dir.join("murphy.json"), &murphy_entries)?;

    let mut header = vec!["config", "convention"];
    let cat_names: Vec<&str> = Category::alphabetical().iter().map(|c| c.as_str()).collect();
    header.extend(cat_names);
    header.push("overall");
    let mut cat_rows = Vec::new();
    category_csv(&ordered_table(per_category(&success_sets), &order), "success", &mut cat_rows);
    category_csv(&ordered_table(per_category(&itt_sets), &order), "itt", &mut cat_rows);
    write_csv(&out_dir.join("per_category.csv"), &header, &cat_rows)?;

    write_file(&out_dir.join("forecasts.jsonl"), forecast_lines)?;
    let summary = ScoreSummary {
        seed: manifest.as_ref().map(|m| m.seed).unwrap_or(0),
        fixture_sha256: sha256_hex(&fixture_bytes),
        n_markets: markets.len(),
        configs: summaries,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(rows)
}

fn ordered_table(mut table: crate::scoring::CategoryTable, order: &[String]) -> crate::scoring::CategoryTable {
    table.configs = order.iter().filter(|c| table.cells.contains_key(*c)).cloned().collect();
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredN {
    pub alpha: f64,
    pub n: Option<u64>,
    pub note: Option<String>,
}

/// `diff` is `brier(b) - brier(a)` over the common markets; positive means
/// `a` is more accurate. Significance is left to the reader: the report
/// carries the uncorrected p value and the corrected threshold only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub diff: f64,
    pub sd: f64,
    pub t_test: Option<TTest>,
    pub bootstrap: Option<BootstrapResult>,
    pub required_n: Vec<RequiredN>,
    pub type_sm: Option<TypeSM>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub configs: Vec<String>,
    pub n_common: usize,
    pub bonferroni_threshold: f64,
    pub pairs: Vec<PairRow>,
    pub frontier: Vec<ParetoPoint>,
    pub disagreements: Vec<Disagreement>,
}

fn required_n_row(diff: f64, sd: f64, level: f64) -> RequiredN {
    let flagged = |n: Option<u64>| RequiredN {
        alpha: level,
        n,
        note: Some(NOT_DETECTABLE.into()),
    };
    if diff.abs() < MIN_DETECTABLE_DIFF {
        return flagged(None);
    }
    match required_n(diff.abs(), sd, level, DEFAULT_POWER) {
        Ok(n) if n > MAX_SENSIBLE_N => flagged(Some(n)),
        Ok(n) => RequiredN {
            alpha: level,
            n: Some(n),
            note: None,
        },
        Err(e) => RequiredN {
            alpha: level,
            n: None,
            note: Some(e.to_string()),
        },
    }
}

/// Pairwise comparison of every scored config over the markets all of them
/// forecast successfully.
pub fn cmd_analyze(score_dir: &Path) -> Result<AnalysisReport, HarnessError> {
    let summary_path = score_dir.join("summary.json");
    let summary: ScoreSummary =
        serde_json::from_str(&read_text(&summary_path)?).map_err(|e| parse_err(&summary_path, e))?;
    let forecasts_path = score_dir.join("forecasts.jsonl");
    let mut by_config: BTreeMap<String, Vec<ForecastRecord>> = BTreeMap::new();
    for (i, line) in read_text(&forecasts_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: ForecastLine =
            serde_json::from_str(line).map_err(|e| parse_err(&forecasts_path, format!("line {}: {e}", i + 1)))?;
        if !f.record.fallback {
            by_config.entry(f.config).or_default().push(f.record);
        }
    }
    let configs: Vec<String> = summary
        .configs
        .iter()
        .map(|c| c.config.clone())
        .filter(|c| by_config.contains_key(c))
        .collect();
    if configs.len() < 2 {
        return Err(HarnessError::TooFewConfigs(configs.len()));
    }

    let mut common: Option<BTreeSet<String>> = None;
    for c in &configs {
        let ids: BTreeSet<String> = by_config[c].iter().map(|r| r.market_id.clone()).collect();
        common = Some(match common {
            None => ids,
            Some(prev) => prev.intersection(&ids).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let mut sets = BTreeMap::new();
    for c in &configs {
        let records = by_config[c]
            .iter()
            .filter(|r| common.contains(&r.market_id))
            .cloned()
            .collect();
        sets.insert(c.clone(), ForecastSet::new(records).map_err(scoring_err)?);
    }

    let n_pairs = configs.len() * (configs.len() - 1) / 2;
    let bonferroni = ALPHA_TIERS[0] / n_pairs as f64;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..configs.len() {
        for j in i + 1..configs.len() {
            let (a, b) = (&configs[i], &configs[j]);
            let sample = PairedSample::from_sets(&sets[a], &sets[b]);
            let n = sample.n();
            let (diff, sd) = if n == 0 { (0.0, 0.0) } else { (sample.mean(), sample.sd()) };
            let t_test = paired_t(&sample).ok();
            let boot = bootstrap(&sample, DEFAULT_RESAMPLES, derive_seed(summary.seed, &format!("bootstrap/{a}/{b}"))).ok();
            let se = if n > 0 { sd / (n as f64).sqrt() } else { 0.0 };
            pairs.push(PairRow {
                a: a.clone(),
                b: b.clone(),
                n,
                diff,
                sd,
                t_test,
                bootstrap: boot,
                required_n: ALPHA_TIERS.iter().map(|&l| required_n_row(diff, sd, l)).collect(),
                type_sm: type_sm(diff, se, ALPHA_TIERS[0]).ok(),
            });
        }
    }

    let points: Vec<ParetoPoint> = summary
        .configs
        .iter()
        .filter_map(|c| c.brier.map(|b| ParetoPoint::new(&c.config, c.cost_per_market, b)))
        .collect();
    let report = AnalysisReport {
        seed: summary.seed,
        configs,
        n_common: common.len(),
        bonferroni_threshold: bonferroni,
        pairs,
        frontier: pareto_frontier(&points),
        disagreements: disagreement_top_k(&sets, DISAGREEMENT_TOP_K),
    };
    write_json(&score_dir.join("analysis.json"), &report)?;
    Ok(report)
}

/// Parses `YYYY-MM-DD` as midnight UTC.
pub fn parse_date(s: &str) -> Result<i64, HarnessError> {
    let d = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| HarnessError::Config(format!("date {s}: {e}")))?;
    Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureBuildSummary {
    pub pool_size: usize,
    pub after_filters: usize,
    pub fixture: crate::fixture::FixtureStats,
}

/// Filters and samples `pool` into `out` (one market per line) and writes
/// the fixture statistics next to it as `<out>.stats.json`.
pub fn cmd_fixture_build(
    pool: &Path,
    cutoff: i64,
    target: usize,
    seed: u64,
    force_uneven: bool,
    out: &Path,
) -> Result<FixtureBuildSummary, HarnessError> {
    let markets = read_markets(pool).map_err(|e| HarnessError::Fixture(e.to_string()))?;
    let filtered = apply_filters(&markets, cutoff);
    let fixture = stratified_sample(
        &filtered,
        target,
        seed,
        SampleOptions {
            force_uneven,
            cutoff: Some(cutoff),
        },
    )
    .map_err(|e| HarnessError::Fixture(e.to_string()))?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_markets(out, &fixture.markets).map_err(|e| HarnessError::Fixture(e.to_string()))?;
    let summary = FixtureBuildSummary {
        pool_size: markets.len(),
        after_filters: filtered.len(),
        fixture: fixture.stats,
    };
    let mut stats_path = out.as_os_str().to_owned();
    stats_path.push(".stats.json");
    write_json(Path::new(&stats_path), &summary)?;
    Ok(summary)
}

/// Writes a synthetic market pool for offline runs.
pub fn cmd_fixture_synth(params: &SyntheticPoolParams, seed: u64, out: &Path) -> Result<usize, HarnessError> {
    let pool = synthetic_pool(params, seed);
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_markets(out, &pool).map_err(|e| HarnessError::Fixture(e.to_string()))?;
    Ok(pool.len())
}
