//! Seeded generator for synthetic market pools.
//!
//! Each market has a latent YES probability drawn uniformly; the outcome is a
//! Bernoulli draw from it and the price path is a logit random walk that ends
//! near the latent probability at the commit deadline, so baselines are
//! calibrated on average. A share of markets is made deliberately ineligible
//! (low volume, disputed, ambiguous, grouped) to exercise the filters.

use rand::Rng;

use super::{Category, Market, Outcome, Tick, SECONDS_PER_DAY};
use crate::seed::{normal_draw, rng_for};

/// Standard deviation of one logit random-walk step in a price path.
const STEP_SD: f64 = 0.12;

#[derive(Debug, Clone)]
pub struct SyntheticPoolParams {
    pub n_markets: usize,
    /// First resolution time, UTC seconds (default 2025-10-06).
    pub start: i64,
    /// Resolution times are spread over this many days.
    pub span_days: i64,
    pub min_ticks: usize,
    pub max_ticks: usize,
    pub low_volume_rate: f64,
    pub disputed_rate: f64,
    pub ambiguous_rate: f64,
    pub grouped_rate: f64,
}

impl Default for SyntheticPoolParams {
    fn default() -> Self {
        Self {
            n_markets: 2000,
            start: 1_759_708_800,
            span_days: 200,
            min_ticks: 40,
            max_ticks: 360,
            low_volume_rate: 0.08,
            disputed_rate: 0.02,
            ambiguous_rate: 0.02,
            grouped_rate: 0.04,
        }
    }
}

impl SyntheticPoolParams {
    /// A pool in which every market survives the filters.
    pub fn clean(n_markets: usize) -> Self {
        Self {
            n_markets,
            low_volume_rate: 0.0,
            disputed_rate: 0.0,
            ambiguous_rate: 0.0,
            grouped_rate: 0.0,
            ..Self::default()
        }
    }
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn synthetic_pool(params: &SyntheticPoolParams, seed: u64) -> Vec<Market> {
    let mut out = Vec::with_capacity(params.n_markets);
    let mut pending_group: Option<String> = None;
    for i in 0..params.n_markets {
        let mut rng = rng_for(seed, &format!("pool/market/{i}"));
        let id = format!("syn-{i:05}");
        let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
        let latent: f64 = rng.random_range(0.02..0.98);
        let outcome = Outcome::from_bool(rng.random::<f64>() < latent);
        let resolved_at = params.start
            + rng.random_range(0..params.span_days.max(1)) * SECONDS_PER_DAY
            + rng.random_range(0..SECONDS_PER_DAY);
        let n_ticks = rng.random_range(params.min_ticks..=params.max_ticks.max(params.min_ticks));
        let deadline = resolved_at - SECONDS_PER_DAY;

        // Walk backwards from the deadline so the last pre-deadline tick sits
        // near the latent probability.
        let first = deadline - 30 * SECONDS_PER_DAY;
        let n_pre = n_ticks.saturating_sub(4).max(1);
        let spacing = (deadline - 1 - first) / n_pre as i64;
        let mut x = logit(latent) + normal_draw(&mut rng, STEP_SD);
        let mut pre = Vec::with_capacity(n_pre);
        for k in (0..n_pre).rev() {
            let ts = first + spacing * k as i64;
            pre.push(Tick::new(ts, round4(sigmoid(x).clamp(0.001, 0.999))));
            x += normal_draw(&mut rng, STEP_SD);
        }
        pre.reverse();
        let mut ticks = pre;
        let target = if outcome == Outcome::Yes { 0.99 } else { 0.01 };
        let last = ticks.last().map(|t| t.mid_price).unwrap_or(latent);
        for k in 0..(n_ticks - n_pre) {
            let frac = (k + 1) as f64 / (n_ticks - n_pre) as f64;
            let ts = deadline + (k as i64) * (SECONDS_PER_DAY / 4);
            ticks.push(Tick::new(ts, round4(last + (target - last) * frac)));
        }

        let mut volume_usd = (60_000.0 * (1.0 + 9.0 * rng.random::<f64>())).round();
        if rng.random::<f64>() < params.low_volume_rate {
            volume_usd = (49_999.0 * rng.random::<f64>()).round();
        }
        let disputed = rng.random::<f64>() < params.disputed_rate;
        let outcome = if rng.random::<f64>() < params.ambiguous_rate {
            None
        } else {
            Some(outcome)
        };
        let event_group_id = match pending_group.take() {
            Some(g) => Some(g),
            None if rng.random::<f64>() < params.grouped_rate => {
                let g = format!("grp-{i:05}");
                pending_group = Some(g.clone());
                Some(g)
            }
            None => None,
        };
        out.push(Market {
            question: format!("Synthetic {} question #{i}: will the event resolve YES?", category),
            id,
            category,
            resolved_at,
            outcome,
            volume_usd,
            event_group_id,
            disputed,
            ticks,
        });
    }
    out
}

fn round4(p: f64) -> f64 {
    (p * 10_000.0).round() / 10_000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{apply_filters, baseline_price};

    #[test]
    fn deterministic_and_ordered() {
        let params = SyntheticPoolParams {
            n_markets: 50,
            ..Default::default()
        };
        let a = synthetic_pool(&params, 5);
        assert_eq!(a, synthetic_pool(&params, 5));
        assert!(a.iter().all(|m| m.ticks_ordered()));
        assert!(a.iter().all(|m| baseline_price(m).is_ok()));
    }

    #[test]
    fn clean_pool_survives_filters() {
        let pool = synthetic_pool(&SyntheticPoolParams::clean(200), 1);
        let kept = apply_filters(&pool, pool.iter().map(|m| m.resolved_at).min().unwrap() - 31 * 86_400);
        assert_eq!(kept.len(), 200);
    }
}
