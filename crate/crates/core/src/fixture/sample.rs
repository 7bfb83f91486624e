use rand::seq::SliceRandom;
use rand::Rng;

use super::{baseline_price, Category, Fixture, FixtureError, Market};
use crate::seed::rng_for;

/// Order in which remainder seats go to categories when `target` is not a
/// multiple of six. For a target of 100 this yields 17/17/17/16/17/16 over
/// crypto, politics, sports, economics, geopolitics, entertainment.
pub const QUOTA_PRIORITY: [Category; 6] = [
    Category::Crypto,
    Category::Politics,
    Category::Sports,
    Category::Geopolitics,
    Category::Economics,
    Category::Entertainment,
];

/// Baseline decile `0..=9`; the top decile is closed at 1.0.
pub fn decile_of(p: f64) -> usize {
    ((p * 10.0).floor().max(0.0) as usize).min(9)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    /// Accept an unbalanced decile spread instead of failing.
    pub force_uneven: bool,
    pub cutoff: Option<i64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("category {category}: need {needed} markets, pool has {available} (shortfall {})", needed - available)]
    InsufficientPool {
        category: Category,
        needed: usize,
        available: usize,
    },
    #[error("category {category}: baseline deciles cannot be balanced (counts {counts:?}); pass force_uneven to accept")]
    DegenerateDeciles { category: Category, counts: [usize; 10] },
    #[error("target must be positive")]
    ZeroTarget,
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

pub(crate) fn category_quotas(target: usize) -> Vec<(Category, usize)> {
    let base = target / Category::ALL.len();
    let extra = target % Category::ALL.len();
    Category::ALL
        .iter()
        .map(|c| {
            let rank = QUOTA_PRIORITY.iter().position(|p| p == c).expect("all categories ranked");
            (*c, base + usize::from(rank < extra))
        })
        .collect()
}

/// Category quotas filled round-robin across baseline deciles, with seeded
/// uniform draws inside each decile. Markets without a baseline are skipped.
pub fn stratified_sample(
    pool: &[Market],
    target: usize,
    seed: u64,
    options: SampleOptions,
) -> Result<Fixture, SampleError> {
    if target == 0 {
        return Err(SampleError::ZeroTarget);
    }
    let mut chosen = Vec::with_capacity(target);
    for (category, quota) in category_quotas(target) {
        if quota == 0 {
            continue;
        }
        let mut eligible: Vec<(&Market, f64)> = pool
            .iter()
            .filter(|m| m.category == category && m.outcome.is_some())
            .filter_map(|m| baseline_price(m).ok().map(|q| (m, q)))
            .collect();
        eligible.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        if eligible.len() < quota {
            return Err(SampleError::InsufficientPool {
                category,
                needed: quota,
                available: eligible.len(),
            });
        }

        let mut buckets: Vec<Vec<&Market>> = vec![Vec::new(); 10];
        for (m, q) in &eligible {
            buckets[decile_of(*q)].push(m);
        }
        for (d, bucket) in buckets.iter_mut().enumerate() {
            bucket.shuffle(&mut rng_for(seed, &format!("fixture/{category}/decile/{d}")));
        }
        let mut next = rng_for(seed, &format!("fixture/{category}/start")).random_range(0..10usize);
        let mut taken = [0usize; 10];
        let mut filled = 0;
        while filled < quota {
            let d = next % 10;
            next += 1;
            if let Some(m) = buckets[d].get(taken[d]) {
                chosen.push((*m).clone());
                taken[d] += 1;
                filled += 1;
            }
        }
        let max = taken.iter().max().copied().unwrap_or(0);
        let min = taken.iter().min().copied().unwrap_or(0);
        if max - min > 1 && !options.force_uneven {
            return Err(SampleError::DegenerateDeciles { category, counts: taken });
        }
    }
    Ok(Fixture::new(chosen, options.cutoff.unwrap_or_default(), seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{Outcome, Tick};

    const T: i64 = 1_770_000_000;

    fn market(id: &str, category: Category, q: f64) -> Market {
        Market {
            id: id.into(),
            question: format!("q {id}"),
            category,
            resolved_at: T,
            outcome: Some(Outcome::No),
            volume_usd: 1e5,
            event_group_id: None,
            disputed: false,
            ticks: vec![Tick::new(T - 3 * 86_400, q)],
        }
    }

    fn pool(per_decile: usize) -> Vec<Market> {
        let mut out = Vec::new();
        for c in Category::ALL {
            for d in 0..10 {
                for k in 0..per_decile {
                    out.push(market(&format!("{c}-{d}-{k}"), c, d as f64 / 10.0 + 0.05));
                }
            }
        }
        out
    }

    #[test]
    fn paper_quotas_for_hundred() {
        let q = category_quotas(100);
        assert_eq!(
            q.iter().map(|(_, n)| *n).collect::<Vec<_>>(),
            vec![17, 17, 17, 16, 17, 16]
        );
    }

    #[test]
    fn one_per_category_is_forced() {
        let pool: Vec<Market> = Category::ALL
            .iter()
            .enumerate()
            .map(|(i, c)| market(&format!("only-{i}"), *c, 0.1 * i as f64 + 0.03))
            .collect();
        let fx = stratified_sample(&pool, 6, 1, SampleOptions::default()).unwrap();
        let mut ids: Vec<_> = fx.markets.iter().map(|m| m.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = pool.iter().map(|m| m.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn degenerate_deciles_fail_unless_forced() {
        let pool: Vec<Market> = (0..60)
            .map(|i| market(&format!("x{i}"), Category::ALL[i % 6], 0.95))
            .collect();
        let err = stratified_sample(&pool, 30, 3, SampleOptions::default()).unwrap_err();
        assert!(matches!(err, SampleError::DegenerateDeciles { .. }));
        let forced = stratified_sample(
            &pool,
            30,
            3,
            SampleOptions {
                force_uneven: true,
                cutoff: None,
            },
        )
        .unwrap();
        assert_eq!(forced.markets.len(), 30);
    }

    #[test]
    fn shortfall_is_named() {
        let pool: Vec<Market> = pool(1).into_iter().filter(|m| m.category != Category::Sports || m.id.ends_with("-0-0")).collect();
        let err = stratified_sample(&pool, 60, 3, SampleOptions::default()).unwrap_err();
        match err {
            SampleError::InsufficientPool {
                category,
                needed,
                available,
            } => {
                assert_eq!(category, Category::Sports);
                assert_eq!((needed, available), (10, 1));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn balanced_and_deterministic() {
        let pool = pool(5);
        let a = stratified_sample(&pool, 100, 9, SampleOptions::default()).unwrap();
        let b = stratified_sample(&pool, 100, 9, SampleOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = stratified_sample(&pool, 100, 10, SampleOptions::default()).unwrap();
        assert_ne!(a.markets, c.markets);
        for cat in Category::ALL {
            let mut counts = [0usize; 10];
            for m in a.markets.iter().filter(|m| m.category == cat) {
                counts[decile_of(baseline_price(m).unwrap())] += 1;
            }
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= 1, "{cat}: {counts:?}");
        }
    }

    #[test]
    fn decile_edges() {
        assert_eq!(decile_of(0.0), 0);
        assert_eq!(decile_of(0.0999), 0);
        assert_eq!(decile_of(0.1), 1);
        assert_eq!(decile_of(0.95), 9);
        assert_eq!(decile_of(1.0), 9);
    }
}
