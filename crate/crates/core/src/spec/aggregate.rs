use super::AggregationKind;

/// Inputs to log-pooling are clamped into `[LOG_POOL_CLAMP, 1 - LOG_POOL_CLAMP]`.
pub const LOG_POOL_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no values")]
    NoValues,
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("degenerate odds")]
    DegenerateOdds,
    #[error("weights required for {0:?}")]
    MissingWeights(AggregationKind),
    #[error("weights must match values ({weights} weights for {values} values)")]
    WeightCount { weights: usize, values: usize },
    #[error("weights must be nonnegative with positive total")]
    BadWeights,
    #[error("selector agent {0} produced no output")]
    SelectorMissing(String),
    #[error("select_by_agent needs agent ids; use AggregationRule::apply")]
    SelectNeedsIds,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolOptions {
    pub clamp_log_odds: bool,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            clamp_log_odds: true,
        }
    }
}

/// Combines probabilities under `kind` with default options.
pub fn pool(kind: AggregationKind, values: &[f64], weights: Option<&[f64]>) -> Result<f64, AggregateError> {
    pool_with(kind, values, weights, PoolOptions::default())
}

pub fn pool_with(
    kind: AggregationKind,
    values: &[f64],
    weights: Option<&[f64]>,
    options: PoolOptions,
) -> Result<f64, AggregateError> {
    if values.is_empty() {
        return Err(AggregateError::NoValues);
    }
    if let Some(&bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(AggregateError::OutOfRange(bad));
    }
    let out = match kind {
        AggregationKind::Mean => values.iter().sum::<f64>() / values.len() as f64,
        AggregationKind::Median => median(values),
        AggregationKind::WeightedMean => {
            let w = normalized(values.len(), weights, kind)?;
            values.iter().zip(&w).map(|(p, w)| p * w).sum()
        }
        AggregationKind::LogPool => {
            let w = normalized(values.len(), weights, kind)?;
            let mut log_odds = 0.0;
            for (&p, &w) in values.iter().zip(&w) {
                let p = if options.clamp_log_odds {
                    p.clamp(LOG_POOL_CLAMP, 1.0 - LOG_POOL_CLAMP)
                } else {
                    p
                };
                if p <= 0.0 || p >= 1.0 {
                    return Err(AggregateError::DegenerateOdds);
                }
                log_odds += w * libm::log(p / (1.0 - p));
            }
            let odds = libm::exp(log_odds);
            odds / (1.0 + odds)
        }
        AggregationKind::SelectByAgent => return Err(AggregateError::SelectNeedsIds),
    };
    Ok(out.clamp(0.0, 1.0))
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

fn normalized(n: usize, weights: Option<&[f64]>, kind: AggregationKind) -> Result<Vec<f64>, AggregateError> {
    let w = weights.ok_or(AggregateError::MissingWeights(kind))?;
    if w.len() != n {
        return Err(AggregateError::WeightCount {
            weights: w.len(),
            values: n,
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || total <= 0.0 {
        return Err(AggregateError::BadWeights);
    }
    Ok(w.iter().map(|x| x / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_three() {
        let p = pool(AggregationKind::Mean, &[0.2, 0.4, 0.6], None).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
    }

    #[test]
    fn log_pool_identical_inputs_is_idempotent() {
        let p = pool(AggregationKind::LogPool, &[0.8, 0.8, 0.8], Some(&[1.0 / 3.0; 3])).unwrap();
        assert!((p - 0.8).abs() < 1e-12);
    }

    #[test]
    fn log_pool_geometric_mean_of_odds() {
        // odds 9 and 1, geometric mean 3, back to 3 / 4
        let p = pool(AggregationKind::LogPool, &[0.9, 0.5], Some(&[0.5, 0.5])).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn log_pool_degenerate_without_clamp() {
        let opts = PoolOptions {
            clamp_log_odds: false,
        };
        let err = pool_with(AggregationKind::LogPool, &[1.0, 0.5], Some(&[0.5, 0.5]), opts).unwrap_err();
        assert_eq!(err, AggregateError::DegenerateOdds);
        let clamped = pool(AggregationKind::LogPool, &[1.0, 0.0], Some(&[0.5, 0.5])).unwrap();
        assert!((clamped - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(pool(AggregationKind::Mean, &[], None), Err(AggregateError::NoValues));
    }

    #[test]
    fn median_even_count_takes_midpoint() {
        let p = pool(AggregationKind::Median, &[0.9, 0.1, 0.3, 0.5], None).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_by_inputs(values in prop::collection::vec(0.0f64..=1.0, 1..12), seed in 0u64..1000) {
            let weights: Vec<f64> = (0..values.len()).map(|i| 1.0 + ((seed + i as u64) % 7) as f64).collect();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for kind in [AggregationKind::Mean, AggregationKind::Median, AggregationKind::WeightedMean] {
                let p = pool(kind, &values, Some(&weights)).unwrap();
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
            let lp = pool(AggregationKind::LogPool, &values, Some(&weights)).unwrap();
            prop_assert!((0.0..=1.0).contains(&lp));
        }
    }
}
