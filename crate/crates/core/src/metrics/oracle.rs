//! Reference RBO used to cross-check [`super::rbo`].
//!
//! Rebuilds both prefix sets from scratch at every depth and evaluates the
//! textbook sum term by term. Quadratic and allocation-heavy; only meant for
//! verification.

use std::collections::BTreeSet;

use super::{MetricError, MetricKind, RankedList, RboMode, RboParams, ScoreParams, SimilarityScore};

pub fn rbo_oracle(
    a: &RankedList,
    b: &RankedList,
    params: RboParams,
) -> Result<SimilarityScore, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::InvalidInput("oracle needs nonempty lists".into()));
    }
    let depth = params.eval_depth().min(a.len()).min(b.len());
    let p = params.p();

    let agreement = |d: usize| -> f64 {
        let sa: BTreeSet<&String> = a.items()[..d].iter().collect();
        let sb: BTreeSet<&String> = b.items()[..d].iter().collect();
        let inter = sa.intersection(&sb).count() as f64;
        let union = sa.union(&sb).count() as f64;
        inter / union
    };

    let mut sum = 0.0;
    let mut weight = 1.0;
    for d in 1..=depth {
        sum += weight * agreement(d);
        weight *= p;
    }
    let mut value = (1.0 - p) * sum;
    if params.mode() == RboMode::Extrapolated {
        value += agreement(depth) * p.powi(depth as i32);
    }
    Ok(SimilarityScore {
        value,
        metric_kind: MetricKind::Rbo,
        params: Some(ScoreParams::Rbo { params, depth }),
    })
}
