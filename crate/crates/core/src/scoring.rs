//! Proper-scoring evaluation of probability forecasts.
//!
//! Brier score, its Murphy decomposition `B = UNC + REL - RES`, Alpha against
//! a baseline forecaster with its resolution-gain / reliability-gap split,
//! per-category breakdowns, and intention-to-treat rescoring of fallbacks.
//!
//! The three-term identity is exact only when every forecast in a bin equals
//! the bin mean, so [`MurphyReport`] carries both the raw Brier score and the
//! binned one (`brier_binned = unc + rel - res`), with the gap as `residual`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::fixture::Category;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("forecast set is empty")]
    Empty,
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("market {0} appears more than once")]
    DuplicateMarket(String),
    #[error("market {id}: probability {p} outside [0, 1]")]
    BadProbability { id: String, p: f64 },
    #[error("market {id}: outcome {y} is not 0 or 1")]
    BadOutcome { id: String, y: f64 },
    #[error("market sets differ: {0:?}")]
    MarketMismatch(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub market_id: String,
    pub p: f64,
    pub y: f64,
    pub category: Category,
    #[serde(default)]
    pub fallback: bool,
}

impl ForecastRecord {
    pub fn new(market_id: impl Into<String>, p: f64, y: f64, category: Category) -> Self {
        Self {
            market_id: market_id.into(),
            p,
            y,
            category,
            fallback: false,
        }
    }

    pub fn squared_error(&self) -> f64 {
        (self.p - self.y) * (self.p - self.y)
    }
}

/// Forecasts with unique market ids, `p` in `[0, 1]` and `y` in `{0, 1}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    records: Vec<ForecastRecord>,
}

impl ForecastSet {
    pub fn new(records: Vec<ForecastRecord>) -> Result<Self, ScoringError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.market_id.as_str()) {
                return Err(ScoringError::DuplicateMarket(r.market_id.clone()));
            }
            if !(0.0..=1.0).contains(&r.p) {
                return Err(ScoringError::BadProbability {
                    id: r.market_id.clone(),
                    p: r.p,
                });
            }
            if r.y != 0.0 && r.y != 1.0 {
                return Err(ScoringError::BadOutcome {
                    id: r.market_id.clone(),
                    y: r.y,
                });
            }
        }
        Ok(Self { records })
    }

    /// Convenience constructor for tests and replays; ids are the indices.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, ScoringError> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (p, y))| ForecastRecord::new(format!("m{i}"), *p, *y, Category::Crypto))
                .collect(),
        )
    }

    pub fn records(&self) -> &[ForecastRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn market_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.market_id.as_str()).collect()
    }

    pub fn filter(&self, keep: impl Fn(&ForecastRecord) -> bool) -> ForecastSet {
        ForecastSet {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Records that did not fall back.
    pub fn successes(&self) -> ForecastSet {
        self.filter(|r| !r.fallback)
    }

    pub fn base_rate(&self) -> f64 {
        self.records.iter().map(|r| r.y).sum::<f64>() / self.records.len() as f64
    }
}

/// Mean squared error between forecast and outcome.
pub fn brier(set: &ForecastSet) -> Result<f64, ScoringError> {
    if set.is_empty() {
        return Err(ScoringError::Empty);
    }
    Ok(set.records.iter().map(ForecastRecord::squared_error).sum::<f64>() / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// `k` equal-width bins `[j/k, (j+1)/k)`, the top bin closed at 1.
    FixedDeciles,
    /// `k` contiguous groups of the forecasts sorted by `p` (stable order),
    /// sizes differing by at most one.
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_forecast: f64,
    pub observed_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MurphyReport {
    pub brier: f64,
    pub brier_binned: f64,
    pub unc: f64,
    pub rel: f64,
    pub res: f64,
    pub residual: f64,
    pub k_bins: usize,
    pub binning: Binning,
    /// Occupied bins only.
    pub per_bin: Vec<BinSummary>,
}

fn bin_assignments(set: &ForecastSet, k: usize, binning: Binning) -> Vec<usize> {
    match binning {
        Binning::FixedDeciles => set
            .records
            .iter()
            .map(|r| ((r.p * k as f64).floor() as usize).min(k - 1))
            .collect(),
        Binning::EqualMass => {
            let n = set.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| set.records[a].p.total_cmp(&set.records[b].p));
            let mut bins = vec![0; n];
            for (rank, idx) in order.into_iter().enumerate() {
                bins[idx] = rank * k / n;
            }
            bins
        }
    }
}

pub fn murphy(set: &ForecastSet, k: usize, binning: Binning) -> Result<MurphyReport, ScoringError> {
    if set.is_empty() {
        return Err(ScoringError::Empty);
    }
    if k < 2 {
        return Err(ScoringError::TooFewBins(k));
    }
    let n = set.len() as f64;
    let base = set.base_rate();
    let bins = bin_assignments(set, k, binning);

    let mut count = vec![0usize; k];
    let mut sum_p = vec![0.0; k];
    let mut sum_y = vec![0.0; k];
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for (r, &b) in set.records.iter().zip(&bins) {
        count[b] += 1;
        sum_p[b] += r.p;
        sum_y[b] += r.y;
        lo[b] = lo[b].min(r.p);
        hi[b] = hi[b].max(r.p);
    }
    let mean_p: Vec<f64> = (0..k).map(|b| if count[b] > 0 { sum_p[b] / count[b] as f64 } else { 0.0 }).collect();

    let mut rel = 0.0;
    let mut res = 0.0;
    let mut per_bin = Vec::new();
    for b in 0..k {
        if count[b] == 0 {
            continue;
        }
        let nk = count[b] as f64;
        let ybar = sum_y[b] / nk;
        rel += nk * (mean_p[b] - ybar).powi(2);
        res += nk * (ybar - base).powi(2);
        let (lower, upper) = match binning {
            Binning::FixedDeciles => (b as f64 / k as f64, (b + 1) as f64 / k as f64),
            Binning::EqualMass => (lo[b], hi[b]),
        };
        per_bin.push(BinSummary {
            lower,
            upper,
            count: count[b],
            mean_forecast: mean_p[b],
            observed_frequency: ybar,
        });
    }
    rel /= n;
    res /= n;
    let unc = base * (1.0 - base);
    let brier_raw = brier(set)?;
    let brier_binned = unc + rel - res;
    Ok(MurphyReport {
        brier: brier_raw,
        brier_binned,
        unc,
        rel,
        res,
        residual: brier_raw - brier_binned,
        k_bins: k,
        binning,
        per_bin,
    })
}

/// Brier score of the forecasts replaced by their bin means, computed
/// directly rather than through the three-term identity.
pub fn binned_brier_direct(set: &ForecastSet, k: usize, binning: Binning) -> Result<f64, ScoringError> {
    if set.is_empty() {
        return Err(ScoringError::Empty);
    }
    let bins = bin_assignments(set, k, binning);
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (r, &b) in set.records.iter().zip(&bins) {
        sum[b] += r.p;
        count[b] += 1;
    }
    let total: f64 = set
        .records
        .iter()
        .zip(&bins)
        .map(|(r, &b)| (sum[b] / count[b] as f64 - r.y).powi(2))
        .sum();
    Ok(total / set.len() as f64)
}

/// `(UNC, REL, RES)` triple, e.g. a published leaderboard row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MurphyComponents {
    pub unc: f64,
    pub rel: f64,
    pub res: f64,
}

impl MurphyComponents {
    pub fn brier(&self) -> f64 {
        self.unc + self.rel - self.res
    }

    pub fn uncertainty_from_base_rate(base_rate: f64) -> f64 {
        base_rate * (1.0 - base_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    /// `brier(baseline) - brier(agent)`; positive means the agent is better.
    pub alpha: f64,
    pub sem_alpha: f64,
    pub res_gain: f64,
    pub rel_gap: f64,
    pub n: usize,
}

/// Pairs the two sets by market id; fails listing the symmetric difference.
pub fn paired<'a>(
    a: &'a ForecastSet,
    b: &'a ForecastSet,
) -> Result<Vec<(&'a ForecastRecord, &'a ForecastRecord)>, ScoringError> {
    let ids_a = a.market_ids();
    let ids_b = b.market_ids();
    if ids_a != ids_b {
        let diff: Vec<String> = ids_a.symmetric_difference(&ids_b).map(|s| s.to_string()).collect();
        return Err(ScoringError::MarketMismatch(diff));
    }
    let by_id: HashMap<&str, &ForecastRecord> = b.records.iter().map(|r| (r.market_id.as_str(), r)).collect();
    Ok(a.records.iter().map(|r| (r, by_id[r.market_id.as_str()])).collect())
}

/// Alpha of `agent` over `baseline` under fixed-decile binning with `k` bins.
pub fn alpha(agent: &ForecastSet, baseline: &ForecastSet) -> Result<AlphaReport, ScoringError> {
    alpha_with(agent, baseline, 10, Binning::FixedDeciles)
}

pub fn alpha_with(
    agent: &ForecastSet,
    baseline: &ForecastSet,
    k: usize,
    binning: Binning,
) -> Result<AlphaReport, ScoringError> {
    let pairs = paired(agent, baseline)?;
    if pairs.is_empty() {
        return Err(ScoringError::Empty);
    }
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(ag, base)| base.squared_error() - ag.squared_error())
        .collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sem = if n > 1 {
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    let ma = murphy(agent, k, binning)?;
    let mb = murphy(baseline, k, binning)?;
    Ok(AlphaReport {
        alpha: brier(baseline)? - brier(agent)?,
        sem_alpha: sem,
        res_gain: ma.res - mb.res,
        rel_gap: mb.rel - ma.rel,
        n,
    })
}

/// Brier by `(config, category)`; cells without records are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub configs: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<Category, f64>>,
    pub overall: BTreeMap<String, f64>,
}

impl CategoryTable {
    pub fn get(&self, config: &str, category: Category) -> Option<f64> {
        self.cells.get(config).and_then(|row| row.get(&category)).copied()
    }

    /// Max minus min across configs for one category.
    pub fn spread(&self, category: Category) -> Option<f64> {
        let values: Vec<f64> = self.configs.iter().filter_map(|c| self.get(c, category)).collect();
        if values.is_empty() {
            return None;
        }
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    }
}

pub fn per_category(sets: &BTreeMap<String, ForecastSet>) -> CategoryTable {
    let mut cells = BTreeMap::new();
    let mut overall = BTreeMap::new();
    for (config, set) in sets {
        let mut row = BTreeMap::new();
        for cat in Category::ALL {
            let sub = set.filter(|r| r.category == cat);
            if let Ok(b) = brier(&sub) {
                row.insert(cat, b);
            }
        }
        if let Ok(b) = brier(set) {
            overall.insert(config.clone(), b);
        }
        cells.insert(config.clone(), row);
    }
    CategoryTable {
        configs: sets.keys().cloned().collect(),
        cells,
        overall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IttResult {
    pub brier_itt: f64,
    pub n_failures: usize,
}

/// Intention-to-treat Brier: successes as scored, every fallback record
/// rescored at `fallback_p`.
pub fn itt_adjust(set: &ForecastSet, fallback_p: f64) -> Result<IttResult, ScoringError> {
    if set.is_empty() {
        return Err(ScoringError::Empty);
    }
    let mut total = 0.0;
    let mut failures = 0;
    for r in &set.records {
        if r.fallback {
            failures += 1;
            total += (fallback_p - r.y).powi(2);
        } else {
            total += r.squared_error();
        }
    }
    Ok(IttResult {
        brier_itt: total / set.len() as f64,
        n_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_constant() {
        let perfect = ForecastSet::from_pairs(&[(1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!(brier(&perfect).unwrap(), 0.0);
        let half = ForecastSet::from_pairs(&[(0.5, 1.0), (0.5, 0.0), (0.5, 0.0)]).unwrap();
        assert_eq!(brier(&half).unwrap(), 0.25);
        assert_eq!(brier(&ForecastSet::default()), Err(ScoringError::Empty));
    }

    #[test]
    fn constant_forecast_decomposition() {
        let c = 0.37;
        let set = ForecastSet::from_pairs(&[(c, 1.0), (c, 0.0), (c, 1.0), (c, 1.0), (c, 0.0)]).unwrap();
        let m = murphy(&set, 10, Binning::FixedDeciles).unwrap();
        let ybar = 0.6;
        assert!((m.rel - (c - ybar).powi(2)).abs() < 1e-15);
        assert_eq!(m.res, 0.0);
        assert!((m.brier - (m.unc + (c - ybar).powi(2))).abs() < 1e-15);
        assert!(m.residual.abs() < 1e-15);
    }

    #[test]
    fn perfect_forecaster_decomposition() {
        let set = ForecastSet::from_pairs(&[(1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (1.0, 1.0), (1.0, 1.0)]).unwrap();
        let m = murphy(&set, 10, Binning::FixedDeciles).unwrap();
        assert_eq!(m.rel, 0.0);
        assert!((m.res - m.unc).abs() < 1e-15);
        assert!(m.brier_binned.abs() < 1e-15);
    }

    #[test]
    fn too_few_bins() {
        let set = ForecastSet::from_pairs(&[(0.3, 1.0)]).unwrap();
        assert_eq!(murphy(&set, 1, Binning::EqualMass), Err(ScoringError::TooFewBins(1)));
    }

    #[test]
    fn top_bin_is_closed() {
        let set = ForecastSet::from_pairs(&[(1.0, 1.0), (0.95, 1.0)]).unwrap();
        let m = murphy(&set, 10, Binning::FixedDeciles).unwrap();
        assert_eq!(m.per_bin.len(), 1);
        assert_eq!(m.per_bin[0].count, 2);
    }

    #[test]
    fn alpha_identity_and_mismatch() {
        let set = ForecastSet::from_pairs(&[(0.3, 1.0), (0.8, 0.0), (0.55, 1.0)]).unwrap();
        let a = alpha(&set, &set).unwrap();
        assert_eq!(a.alpha, 0.0);
        assert_eq!(a.sem_alpha, 0.0);
        let other = ForecastSet::from_pairs(&[(0.3, 1.0)]).unwrap();
        match alpha(&set, &other) {
            Err(ScoringError::MarketMismatch(ids)) => assert_eq!(ids, vec!["m1", "m2"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn itt_cases() {
        let mut records: Vec<ForecastRecord> = (0..10)
            .map(|i| ForecastRecord::new(format!("m{i}"), 0.7, 1.0, Category::Sports))
            .collect();
        let set = ForecastSet::new(records.clone()).unwrap();
        assert_eq!(itt_adjust(&set, 0.5).unwrap().brier_itt, brier(&set).unwrap());
        for r in &mut records {
            r.fallback = true;
        }
        let all_fb = ForecastSet::new(records).unwrap();
        let itt = itt_adjust(&all_fb, 0.5).unwrap();
        assert_eq!(itt.brier_itt, 0.25);
        assert_eq!(itt.n_failures, 10);
    }

    #[test]
    fn single_category_equals_overall() {
        let set = ForecastSet::from_pairs(&[(0.2, 0.0), (0.9, 1.0), (0.4, 1.0)]).unwrap();
        let table = per_category(&BTreeMap::from([("cfg".to_string(), set.clone())]));
        assert_eq!(table.get("cfg", Category::Crypto), Some(brier(&set).unwrap()));
        assert_eq!(table.get("cfg", Category::Sports), None);
        assert_eq!(table.spread(Category::Crypto), Some(0.0));
    }

    fn arb_set() -> impl Strategy<Value = ForecastSet> {
        prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 2..200).prop_map(|v| {
            ForecastSet::from_pairs(&v.into_iter().map(|(p, y)| (p, if y { 1.0 } else { 0.0 })).collect::<Vec<_>>())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn identity_matches_direct_binned_brier(set in arb_set(), k in 2usize..25, mass in prop::bool::ANY) {
            let binning = if mass { Binning::EqualMass } else { Binning::FixedDeciles };
            let m = murphy(&set, k, binning).unwrap();
            let direct = binned_brier_direct(&set, k, binning).unwrap();
            prop_assert!((m.brier_binned - direct).abs() < 1e-12);
            prop_assert!(m.rel >= 0.0 && m.res >= 0.0 && m.unc >= 0.0);
        }

        #[test]
        fn alpha_is_antisymmetric(a in arb_set(), seed in 0u64..1000) {
            let b_records: Vec<ForecastRecord> = a.records().iter().enumerate().map(|(i, r)| {
                let mut r = r.clone();
                r.p = ((i as u64 * 7919 + seed) % 1000) as f64 / 999.0;
                r
            }).collect();
            let b = ForecastSet::new(b_records).unwrap();
            let ab = alpha(&a, &b).unwrap();
            let ba = alpha(&b, &a).unwrap();
            prop_assert!((ab.alpha + ba.alpha).abs() < 1e-15);
            prop_assert!((ab.sem_alpha - ba.sem_alpha).abs() < 1e-12);
        }

        #[test]
        fn itt_leaves_successes_untouched(set in arb_set(), flag in 0usize..200) {
            let mut records = set.records().to_vec();
            let idx = flag % records.len();
            records[idx].fallback = true;
            let flagged = ForecastSet::new(records.clone()).unwrap();
            let itt = itt_adjust(&flagged, 0.5).unwrap();
            let expected: f64 = records.iter().map(|r| if r.fallback { (0.5 - r.y).powi(2) } else { r.squared_error() }).sum::<f64>() / records.len() as f64;
            prop_assert!((itt.brier_itt - expected).abs() < 1e-12);
            prop_assert_eq!(itt.n_failures, 1);
        }
    }
}
