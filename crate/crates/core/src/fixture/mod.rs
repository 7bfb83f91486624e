//! Resolved binary markets and the evaluation fixture built from them.
//!
//! The pipeline is: ingest a pool of markets from a line-delimited file,
//! [`apply_filters`], then [`stratified_sample`] down to a category- and
//! decile-balanced [`Fixture`]. Baselines come from [`baseline_price`].

mod sample;
mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use sample::{decile_of, stratified_sample, SampleError, SampleOptions, QUOTA_PRIORITY};
pub use synthetic::{synthetic_pool, SyntheticPoolParams};

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Markets must resolve at least this long after the training cutoff.
pub const CUTOFF_BUFFER_SECS: i64 = 30 * SECONDS_PER_DAY;
pub const MIN_VOLUME_USD: f64 = 50_000.0;
/// Baseline ticks must precede resolution by strictly more than this.
pub const BASELINE_LEAD_SECS: i64 = SECONDS_PER_DAY;
/// Question prefix length used by the bucket heuristic.
pub const BUCKET_PREFIX_CHARS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Crypto,
    Politics,
    Sports,
    Economics,
    Geopolitics,
    Entertainment,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Crypto,
        Category::Politics,
        Category::Sports,
        Category::Economics,
        Category::Geopolitics,
        Category::Entertainment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Crypto => "crypto",
            Category::Politics => "politics",
            Category::Sports => "sports",
            Category::Economics => "economics",
            Category::Geopolitics => "geopolitics",
            Category::Entertainment => "entertainment",
        }
    }

    /// Alphabetical order, used for report columns.
    pub fn alphabetical() -> [Category; 6] {
        let mut all = Self::ALL;
        all.sort_by_key(|c| c.as_str());
        all
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary resolution, stored as `0` (NO) or `1` (YES).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    No,
    Yes,
}

impl Outcome {
    pub fn as_f64(self) -> f64 {
        match self {
            Outcome::No => 0.0,
            Outcome::Yes => 1.0,
        }
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Outcome::Yes
        } else {
            Outcome::No
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_f64() as u8)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Outcome::No),
            1 => Ok(Outcome::Yes),
            other => Err(serde::de::Error::custom(format!("outcome must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// UTC seconds.
    pub timestamp: i64,
    pub mid_price: f64,
}

impl Tick {
    pub fn new(timestamp: i64, mid_price: f64) -> Self {
        Self { timestamp, mid_price }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub id: String,
    pub question: String,
    pub category: Category,
    /// UTC seconds.
    pub resolved_at: i64,
    /// `None` for invalid, split or otherwise ambiguous resolutions.
    pub outcome: Option<Outcome>,
    pub volume_usd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_group_id: Option<String>,
    #[serde(default)]
    pub disputed: bool,
    pub ticks: Vec<Tick>,
}

impl Market {
    /// Latest instant at which a forecaster may observe prices.
    pub fn commit_deadline(&self) -> i64 {
        self.resolved_at - BASELINE_LEAD_SECS
    }

    pub fn ticks_ordered(&self) -> bool {
        self.ticks.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }

    pub fn outcome_value(&self) -> Option<f64> {
        self.outcome.map(Outcome::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("no pre-deadline tick for market {0}")]
    NoPreDeadlineTick(String),
}

/// Mid-price of the latest tick strictly more than 24 hours before resolution.
pub fn baseline_price(market: &Market) -> Result<f64, BaselineError> {
    let deadline = market.commit_deadline();
    let n = market.ticks.partition_point(|t| t.timestamp < deadline);
    if n == 0 {
        return Err(BaselineError::NoPreDeadlineTick(market.id.clone()));
    }
    Ok(market.ticks[n - 1].mid_price)
}

/// Retains markets passing the eligibility filters, in pool order:
/// resolution at least 30 days after `cutoff`, volume of at least $50,000,
/// undisputed unambiguous outcome, and not a leg of a multi-outcome bucket.
pub fn apply_filters(pool: &[Market], cutoff: i64) -> Vec<Market> {
    let survivors: Vec<&Market> = pool
        .iter()
        .filter(|m| m.resolved_at >= cutoff + CUTOFF_BUFFER_SECS)
        .filter(|m| m.volume_usd >= MIN_VOLUME_USD)
        .filter(|m| !m.disputed && m.outcome.is_some())
        .collect();
    let buckets = bucket_members(&survivors);
    survivors
        .into_iter()
        .filter(|m| !buckets.contains(m.id.as_str()))
        .cloned()
        .collect()
}

/// Ids of markets that belong to a multi-outcome event group. Markets with an
/// explicit group id are grouped by it; the rest by a case-folded question
/// prefix among markets resolving on the same UTC day.
fn bucket_members<'a>(markets: &[&'a Market]) -> HashSet<&'a str> {
    let mut by_group: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut by_prefix: HashMap<(i64, String), Vec<&str>> = HashMap::new();
    for m in markets {
        match &m.event_group_id {
            Some(g) => by_group.entry(g.as_str()).or_default().push(m.id.as_str()),
            None => {
                let prefix: String = m.question.to_lowercase().chars().take(BUCKET_PREFIX_CHARS).collect();
                let day = m.resolved_at.div_euclid(SECONDS_PER_DAY);
                by_prefix.entry((day, prefix)).or_default().push(m.id.as_str());
            }
        }
    }
    by_group
        .into_values()
        .chain(by_prefix.into_values())
        .filter(|ids| ids.len() > 1)
        .flatten()
        .collect()
}

/// Decile counts are indexed `[0.0, 0.1) .. [0.9, 1.0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureStats {
    pub n_markets: usize,
    pub yes_fraction: f64,
    pub uncertainty: f64,
    pub per_category: Vec<(Category, usize)>,
    pub per_decile: [usize; 10],
    pub baseline_brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub markets: Vec<Market>,
    pub cutoff: i64,
    pub created_seed: u64,
    pub stats: FixtureStats,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture is empty")]
    Empty,
    #[error("market {0} has no resolved outcome")]
    Unresolved(String),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// YES fraction, category and decile counts, and the baseline Brier score.
pub fn fixture_stats(markets: &[Market]) -> Result<FixtureStats, FixtureError> {
    if markets.is_empty() {
        return Err(FixtureError::Empty);
    }
    let n = markets.len() as f64;
    let mut yes = 0usize;
    let mut sq = 0.0;
    let mut per_decile = [0usize; 10];
    let mut per_category: Vec<(Category, usize)> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for m in markets {
        let y = m.outcome_value().ok_or_else(|| FixtureError::Unresolved(m.id.clone()))?;
        let q = baseline_price(m)?;
        if y == 1.0 {
            yes += 1;
        }
        sq += (q - y) * (q - y);
        per_decile[decile_of(q)] += 1;
        if let Some(slot) = per_category.iter_mut().find(|(c, _)| *c == m.category) {
            slot.1 += 1;
        }
    }
    let yes_fraction = yes as f64 / n;
    Ok(FixtureStats {
        n_markets: markets.len(),
        yes_fraction,
        uncertainty: yes_fraction * (1.0 - yes_fraction),
        per_category,
        per_decile,
        baseline_brier: sq / n,
    })
}

impl Fixture {
    pub fn new(markets: Vec<Market>, cutoff: i64, created_seed: u64) -> Result<Self, FixtureError> {
        let stats = fixture_stats(&markets)?;
        Ok(Self {
            markets,
            cutoff,
            created_seed,
            stats,
        })
    }

    pub fn market(&self, id: &str) -> Option<&Market> {
        self.markets.iter().find(|m| m.id == id)
    }
}

/// Reads one market per line; blank lines are skipped.
pub fn read_markets(path: &Path) -> Result<Vec<Market>, FixtureError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let market = serde_json::from_str(&line).map_err(|source| FixtureError::Parse { line: i + 1, source })?;
        out.push(market);
    }
    Ok(out)
}

pub fn markets_to_jsonl(markets: &[Market]) -> String {
    let mut out = String::new();
    for m in markets {
        out.push_str(&serde_json::to_string(m).expect("market serializes"));
        out.push('\n');
    }
    out
}

pub fn write_markets(path: &Path, markets: &[Market]) -> Result<(), FixtureError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(markets_to_jsonl(markets).as_bytes())?;
    Ok(())
}
