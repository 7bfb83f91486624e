//! Paired comparison statistics: t-tests, percentile bootstrap, required
//! sample size, Type-S/Type-M error rates, the cost/quality Pareto frontier
//! and the cross-configuration disagreement finder.

pub mod dist;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scoring::ForecastSet;
use crate::seed::rng_for;
use dist::{norm_cdf, norm_pdf, norm_ppf, norm_sf, t_ppf, t_two_sided_p};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_POWER: f64 = 0.80;
/// Significance levels reported by the analyzer.
pub const ALPHA_TIERS: [f64; 3] = [0.05, 0.005, 0.001];
const BOOTSTRAP_CHUNK: usize = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 paired observations, got {0}")]
    TooFew(usize),
    #[error("degenerate sample")]
    Degenerate,
    #[error("no detectable effect")]
    NoEffect,
    #[error("standard deviation must be positive")]
    NonPositiveSd,
    #[error("alpha and power must lie in (0, 1)")]
    BadLevel,
}

/// Per-market squared-error differences `d_i = se_b - se_a`, so a negative
/// mean means `a` scored the higher (worse) Brier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub market_ids: Vec<String>,
    pub d: Vec<f64>,
}

impl PairedSample {
    pub fn from_diffs(d: Vec<f64>) -> Self {
        Self {
            market_ids: (0..d.len()).map(|i| i.to_string()).collect(),
            d,
        }
    }

    /// Pairs on the intersection of the two sets' market ids, in id order.
    pub fn from_sets(a: &ForecastSet, b: &ForecastSet) -> Self {
        let by_id: HashMap<&str, f64> = b
            .records()
            .iter()
            .map(|r| (r.market_id.as_str(), r.squared_error()))
            .collect();
        let mut pairs: Vec<(String, f64)> = a
            .records()
            .iter()
            .filter_map(|r| by_id.get(r.market_id.as_str()).map(|se_b| (r.market_id.clone(), se_b - r.squared_error())))
            .collect();
        pairs.sort_by(|x, y| x.0.cmp(&y.0));
        let (market_ids, d) = pairs.into_iter().unzip();
        Self { market_ids, d }
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn mean(&self) -> f64 {
        self.d.iter().sum::<f64>() / self.d.len() as f64
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn sd(&self) -> f64 {
        let m = self.mean();
        (self.d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (self.d.len() - 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub df: usize,
}

pub fn paired_t(sample: &PairedSample) -> Result<TTest, StatsError> {
    let n = sample.n();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let sd = sample.sd();
    if !(sd > 0.0) {
        return Err(StatsError::Degenerate);
    }
    let t = sample.mean() / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        p_two_sided: t_two_sided_p(t, df as f64),
        df,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_diff: f64,
    pub ci95: (f64, f64),
    pub ci99: (f64, f64),
    /// Share of resampled means on the opposite side of zero from the
    /// observed mean (ties at zero count as opposite).
    pub p_better: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap of the mean. Resamples are drawn in fixed-size
/// chunks, each from its own derived stream, so the result does not depend
/// on the number of worker threads.
pub fn bootstrap(sample: &PairedSample, n_resamples: usize, seed: u64) -> Result<BootstrapResult, StatsError> {
    let n = sample.n();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let n_chunks = n_resamples.div_ceil(BOOTSTRAP_CHUNK);
    let mut means: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_for(seed, &format!("bootstrap/chunk/{c}"));
            let count = BOOTSTRAP_CHUNK.min(n_resamples - c * BOOTSTRAP_CHUNK);
            let d = &sample.d;
            (0..count)
                .map(move |_| {
                    let mut s = 0.0;
                    for _ in 0..n {
                        s += d[rng.random_range(0..n)];
                    }
                    s / n as f64
                })
                .collect::<Vec<_>>()
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let mean_diff = sample.mean();
    let opposite = if mean_diff >= 0.0 {
        means.iter().filter(|m| **m <= 0.0).count()
    } else {
        means.iter().filter(|m| **m >= 0.0).count()
    };
    Ok(BootstrapResult {
        mean_diff,
        ci95: (percentile(&means, 0.025), percentile(&means, 0.975)),
        ci99: (percentile(&means, 0.005), percentile(&means, 0.995)),
        p_better: opposite as f64 / n_resamples as f64,
        n_resamples,
        seed,
    })
}

/// Sample size for a two-sided paired test: normal approximation, then one
/// pass with t quantiles at `df = n0 - 1`.
pub fn required_n(effect: f64, sd: f64, alpha: f64, power: f64) -> Result<u64, StatsError> {
    if effect == 0.0 || !effect.is_finite() {
        return Err(StatsError::NoEffect);
    }
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(StatsError::NonPositiveSd);
    }
    if !(alpha > 0.0 && alpha < 1.0 && power > 0.0 && power < 1.0) {
        return Err(StatsError::BadLevel);
    }
    let ratio = sd / effect.abs();
    let z = (norm_ppf(1.0 - alpha / 2.0) + norm_ppf(power)) * ratio;
    let n0 = (z * z).ceil().max(2.0);
    if n0 > 1e9 {
        return Ok(n0 as u64);
    }
    let df = n0 - 1.0;
    let t = (t_ppf(1.0 - alpha / 2.0, df) + t_ppf(power, df)) * ratio;
    Ok((t * t).ceil().max(2.0) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeSM {
    pub power: f64,
    pub type_s: f64,
    /// Infinite when the assumed effect is zero.
    pub type_m: f64,
    pub alpha_level: f64,
}

/// `∫_lo^hi f` by composite Simpson with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Sign and magnitude error rates of a significant estimate when the true
/// effect equals `effect` and the estimate is Normal with standard error `se`.
pub fn type_sm(effect: f64, se: f64, alpha: f64) -> Result<TypeSM, StatsError> {
    if !(se > 0.0) {
        return Err(StatsError::NonPositiveSd);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadLevel);
    }
    let lambda = effect.abs() / se;
    let zc = norm_ppf(1.0 - alpha / 2.0);
    let upper = norm_sf(zc - lambda);
    let lower = norm_cdf(-zc - lambda);
    let power = upper + lower;
    let type_s = lower / power;
    let type_m = if lambda == 0.0 {
        f64::INFINITY
    } else {
        // E[|X| ; |X| > zc] for X ~ N(lambda, 1), both tails mapped onto [zc, ∞).
        let density = |x: f64| x * (norm_pdf(x - lambda) + norm_pdf(x + lambda));
        let top = zc.max(lambda) + 12.0;
        let mass = simpson(density, zc, top, 20_000);
        mass / power / lambda
    };
    Ok(TypeSM {
        power,
        type_s,
        type_m,
        alpha_level: alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config: String,
    pub cost_per_market: f64,
    pub brier: f64,
}

impl ParetoPoint {
    pub fn new(config: impl Into<String>, cost_per_market: f64, brier: f64) -> Self {
        Self {
            config: config.into(),
            cost_per_market,
            brier,
        }
    }

    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.cost_per_market <= other.cost_per_market
            && self.brier <= other.brier
            && (self.cost_per_market < other.cost_per_market || self.brier < other.brier)
    }
}

/// Non-dominated points sorted by cost, then Brier, then name.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut frontier: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .cloned()
        .collect();
    frontier.sort_by(|a, b| {
        a.cost_per_market
            .total_cmp(&b.cost_per_market)
            .then(a.brier.total_cmp(&b.brier))
            .then(a.config.cmp(&b.config))
    });
    frontier
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub market_id: String,
    pub spread: f64,
    pub forecasts: BTreeMap<String, f64>,
}

/// Markets forecast by every config, ranked by `max p - min p` (descending,
/// ties by market id). Fewer than two configs yields nothing.
pub fn disagreement_top_k(predictions: &BTreeMap<String, ForecastSet>, k: usize) -> Vec<Disagreement> {
    if predictions.len() < 2 {
        return Vec::new();
    }
    let mut common: Option<BTreeSet<&str>> = None;
    for set in predictions.values() {
        let ids = set.market_ids();
        common = Some(match common {
            None => ids,
            Some(c) => c.intersection(&ids).copied().collect(),
        });
    }
    let lookup: BTreeMap<&str, HashMap<&str, f64>> = predictions
        .iter()
        .map(|(cfg, set)| (cfg.as_str(), set.records().iter().map(|r| (r.market_id.as_str(), r.p)).collect()))
        .collect();
    let mut rows: Vec<Disagreement> = common
        .unwrap_or_default()
        .into_iter()
        .map(|id| {
            let forecasts: BTreeMap<String, f64> = lookup.iter().map(|(cfg, m)| (cfg.to_string(), m[id])).collect();
            let hi = forecasts.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = forecasts.values().cloned().fold(f64::INFINITY, f64::min);
            Disagreement {
                market_id: id.to_string(),
                spread: hi - lo,
                forecasts,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.spread.total_cmp(&a.spread).then(a.market_id.cmp(&b.market_id)));
    rows.truncate(k);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::Category;
    use crate::scoring::ForecastRecord;

    #[test]
    fn t_test_examples() {
        assert_eq!(paired_t(&PairedSample::from_diffs(vec![0.0; 5])), Err(StatsError::Degenerate));
        let r = paired_t(&PairedSample::from_diffs(vec![1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_two_sided - 1.0).abs() < 1e-12);
        // Sixteen points with mean 0.5 and sample sd exactly 1.
        let half = (15.0f64 / 16.0).sqrt();
        let d: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 0.5 + half } else { 0.5 - half }).collect();
        let r = paired_t(&PairedSample::from_diffs(d)).unwrap();
        assert!((r.t - 2.0).abs() < 1e-12);
        assert_eq!(r.df, 15);
        assert!((r.p_two_sided - 0.0639450072847202).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let s = PairedSample::from_diffs(vec![0.2; 30]);
        let b = bootstrap(&s, 1000, 1).unwrap();
        for (lo, hi) in [b.ci95, b.ci99] {
            assert!((lo - 0.2).abs() < 1e-15 && (hi - 0.2).abs() < 1e-15);
        }
        let s = PairedSample::from_diffs((0..40).map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.4).collect());
        let a = bootstrap(&s, 2000, 7).unwrap();
        assert_eq!(a, bootstrap(&s, 2000, 7).unwrap());
        assert!(a.ci99.0 <= a.ci95.0 && a.ci95.1 <= a.ci99.1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(a, pool.install(|| bootstrap(&s, 2000, 7).unwrap()));
    }

    #[test]
    fn required_n_oracles() {
        let d = 1.79 / 94f64.sqrt();
        assert_eq!(required_n(d, 1.0, 0.05, 0.8).unwrap(), 233);
        assert_eq!(required_n(d, 1.0, 0.005, 0.8).unwrap(), 395);
        assert_eq!(required_n(d, 1.0, 0.001, 0.8).unwrap(), 506);
        assert_eq!(required_n(1.0, 1.0, 0.05, 0.8).unwrap(), 11);
        assert_eq!(required_n(0.0, 1.0, 0.05, 0.8), Err(StatsError::NoEffect));
        assert_eq!(required_n(-d, 1.0, 0.05, 0.8).unwrap(), 233);
    }

    /// Closed form: `∫_c^∞ x φ(x - λ) dx = φ(c - λ) + λ Q(c - λ)`.
    fn type_m_closed(lambda: f64, alpha: f64) -> f64 {
        let zc = norm_ppf(1.0 - alpha / 2.0);
        let up = norm_pdf(zc - lambda) + lambda * norm_sf(zc - lambda);
        let down = norm_pdf(zc + lambda) - lambda * norm_sf(zc + lambda);
        let power = norm_sf(zc - lambda) + norm_cdf(-zc - lambda);
        (up + down) / power / lambda
    }

    #[test]
    fn type_sm_against_closed_form() {
        for (lambda, alpha) in [(1.79, 0.05), (0.5, 0.05), (1.79, 0.005), (2.8, 0.05), (10.0, 0.05), (0.1, 0.001)] {
            let r = type_sm(lambda, 1.0, alpha).unwrap();
            assert!((r.type_m - type_m_closed(lambda, alpha)).abs() < 1e-9, "{lambda} {alpha}");
            assert!(r.type_s <= 0.5);
        }
        let r = type_sm(1.79, 1.0, 0.05).unwrap();
        assert!((r.power - 0.43261).abs() < 1e-5);
        assert!((r.type_s - 0.000204).abs() < 1e-5);
        assert!((r.type_m - 1.50784).abs() < 1e-4);
        let r = type_sm(0.5, 1.0, 0.05).unwrap();
        assert!((r.type_s - 0.08784).abs() < 1e-4);
        assert!((r.type_m - 4.7886).abs() < 1e-3);
        let r = type_sm(10.0, 1.0, 0.05).unwrap();
        assert!(r.type_s < 1e-20 && (r.type_m - 1.0).abs() < 1e-6);
    }

    #[test]
    fn frontier_examples() {
        let p = ParetoPoint::new("only", 0.2, 0.2);
        assert_eq!(pareto_frontier(std::slice::from_ref(&p)), vec![p]);
        let f = pareto_frontier(&[ParetoPoint::new("cons", 0.10, 0.181), ParetoPoint::new("ens", 0.10, 0.159)]);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].config, "ens");
    }

    fn set(ps: &[(&str, f64)]) -> ForecastSet {
        ForecastSet::new(ps.iter().map(|(id, p)| ForecastRecord::new(*id, *p, 1.0, Category::Politics)).collect()).unwrap()
    }

    #[test]
    fn disagreement_ranks() {
        let preds = BTreeMap::from([
            ("a".to_string(), set(&[("m1", 0.3), ("m2", 0.5), ("m3", 0.1)])),
            ("b".to_string(), set(&[("m1", 0.7), ("m2", 0.5), ("m4", 0.9)])),
        ]);
        let top = disagreement_top_k(&preds, 5);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].market_id, "m1");
        assert!((top[0].spread - 0.4).abs() < 1e-12);
        assert_eq!(top[1].spread, 0.0);
    }

    #[test]
    fn paired_sample_sign() {
        let a = set(&[("m1", 0.2), ("m2", 0.9)]);
        let b = set(&[("m2", 0.5), ("m1", 0.8)]);
        let s = PairedSample::from_sets(&a, &b);
        assert_eq!(s.market_ids, vec!["m1", "m2"]);
        // a is worse on m1 and better on m2.
        assert!(s.d[0] < 0.0 && s.d[1] > 0.0);
    }
}
