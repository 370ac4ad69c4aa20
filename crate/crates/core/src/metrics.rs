//! Similarity between ranked result lists.
//!
//! Jaccard similarity compares result *sets*; Rank Biased Overlap weights the
//! agreement between prefixes geometrically so that differences near the top
//! of the ranking dominate. Agreement at depth `d` is the Jaccard similarity of
//! the two top-`d` prefixes, which is also the per-depth term inside RBO:
//!
//! ```text
//! RBO(S, T, p) = (1 - p) * Σ_{d ≥ 1} p^(d-1) * A_d
//! ```
//!
//! Scraped lists are finite, so evaluation stops at depth `D`. In
//! [`RboMode::Base`] the tail is simply dropped; in [`RboMode::Extrapolated`]
//! the agreement observed at `D` is assumed to persist, adding `A_D * p^D`, so
//! that identical lists score exactly 1.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, BrowserId, EngineId, QueryId};

pub mod oracle;

/// Default evaluation depth: the number of results collected per session.
pub const DEFAULT_DEPTH: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid depth {depth}: lists have lengths {len_a} and {len_b}")]
    InvalidDepth {
        depth: usize,
        len_a: usize,
        len_b: usize,
    },
    #[error("invalid RBO parameters: {0}")]
    InvalidParams(String),
    #[error("duplicate item {0:?} in ranked list")]
    Duplicate(String),
}

/// Where a ranked list came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListOrigin {
    pub agent: AgentId,
    pub engine: EngineId,
    pub browser: BrowserId,
    pub query: QueryId,
    pub session_index: usize,
}

/// Ordered, duplicate-free list of normalised result URLs. Index 0 is rank 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    items: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<ListOrigin>,
}

impl RankedList {
    /// Builds a list, rejecting duplicates.
    pub fn new<I, S>(items: I) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: Vec<String> = items.into_iter().map(Into::into).collect();
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.as_str()) {
                return Err(MetricError::Duplicate(item.clone()));
            }
        }
        Ok(RankedList {
            items,
            origin: None,
        })
    }

    /// Builds a list keeping the first occurrence of every item.
    pub fn dedup_first<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let items = items
            .into_iter()
            .map(Into::into)
            .filter(|s: &String| seen.insert(s.clone()))
            .collect();
        RankedList {
            items,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: ListOrigin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn origin(&self) -> Option<&ListOrigin> {
        self.origin.as_ref()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn truncate(&mut self, depth: usize) {
        self.items.truncate(depth);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RboMode {
    Base,
    Extrapolated,
}

/// Persistence, evaluation depth and tail handling for RBO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RboParams {
    p: f64,
    eval_depth: usize,
    mode: RboMode,
}

impl RboParams {
    pub fn new(p: f64, eval_depth: usize, mode: RboMode) -> Result<Self, MetricError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(MetricError::InvalidParams(format!(
                "persistence must lie in (0, 1), got {p}"
            )));
        }
        if eval_depth == 0 {
            return Err(MetricError::InvalidParams(
                "evaluation depth must be at least 1".into(),
            ));
        }
        Ok(RboParams {
            p,
            eval_depth,
            mode,
        })
    }

    /// Extrapolated RBO at the default depth.
    pub fn extrapolated(p: f64) -> Result<Self, MetricError> {
        Self::new(p, DEFAULT_DEPTH, RboMode::Extrapolated)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eval_depth(&self) -> usize {
        self.eval_depth
    }

    pub fn mode(&self) -> RboMode {
        self.mode
    }

    pub fn with_mode(self, mode: RboMode) -> Self {
        RboParams { mode, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    JaccardOverall,
    JaccardTopk,
    Rbo,
}

/// Parameters that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreParams {
    TopK(usize),
    /// `depth` is the depth actually evaluated after truncating both lists to
    /// the shorter one.
    Rbo { params: RboParams, depth: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub metric_kind: MetricKind,
    pub params: Option<ScoreParams>,
}

fn require_nonempty(a: &RankedList, b: &RankedList) -> Result<(), MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::InvalidInput(format!(
            "metrics need nonempty lists (got lengths {} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// |A ∩ B| / |A ∪ B| over two duplicate-free slices.
pub(crate) fn jaccard_of<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let large: HashSet<&T> = large.iter().collect();
    let inter = small.iter().filter(|x| large.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

pub fn jaccard_overall(a: &RankedList, b: &RankedList) -> Result<SimilarityScore, MetricError> {
    require_nonempty(a, b)?;
    Ok(SimilarityScore {
        value: jaccard_of(a.items(), b.items()),
        metric_kind: MetricKind::JaccardOverall,
        params: None,
    })
}

/// Jaccard similarity of the top-`k` prefixes. `k` is clamped to each list's
/// length, so short lists are compared as a whole.
pub fn jaccard_topk(
    a: &RankedList,
    b: &RankedList,
    k: usize,
) -> Result<SimilarityScore, MetricError> {
    require_nonempty(a, b)?;
    if k == 0 {
        return Err(MetricError::InvalidInput("k must be at least 1".into()));
    }
    let ka = k.min(a.len());
    let kb = k.min(b.len());
    Ok(SimilarityScore {
        value: jaccard_of(&a.items()[..ka], &b.items()[..kb]),
        metric_kind: MetricKind::JaccardTopk,
        params: Some(ScoreParams::TopK(k)),
    })
}

/// A_d: Jaccard similarity of the two top-`d` prefixes. Unlike
/// [`jaccard_topk`], `d` must not exceed either list.
pub fn agreement_at_depth(a: &RankedList, b: &RankedList, d: usize) -> Result<f64, MetricError> {
    if d == 0 || d > a.len() || d > b.len() {
        return Err(MetricError::InvalidDepth {
            depth: d,
            len_a: a.len(),
            len_b: b.len(),
        });
    }
    jaccard_topk(a, b, d).map(|s| s.value)
}

/// Rank Biased Overlap.
///
/// Both lists are truncated to `min(eval_depth, len(a), len(b))` before
/// evaluation; the depth used is reported in the score's params. Prefix
/// overlaps are maintained incrementally so the whole computation is O(D).
pub fn rbo(
    a: &RankedList,
    b: &RankedList,
    params: RboParams,
) -> Result<SimilarityScore, MetricError> {
    require_nonempty(a, b)?;
    let depth = params.eval_depth.min(a.len()).min(b.len());
    let agreements = prefix_agreements(&a.items()[..depth], &b.items()[..depth]);
    let value = rbo_from_agreements(&agreements, params.p, params.mode);
    Ok(SimilarityScore {
        value,
        metric_kind: MetricKind::Rbo,
        params: Some(ScoreParams::Rbo { params, depth }),
    })
}

/// A_1..A_D for two equal-length prefixes. The overlap count x_d is updated in
/// O(1) per depth; with two size-d prefixes the union is 2d - x_d.
fn prefix_agreements<T: Eq + Hash>(a: &[T], b: &[T]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut seen_a: HashSet<&T> = HashSet::with_capacity(a.len());
    let mut seen_b: HashSet<&T> = HashSet::with_capacity(b.len());
    let mut overlap = 0usize;
    let mut out = Vec::with_capacity(a.len());
    for (d, (x, y)) in a.iter().zip(b).enumerate() {
        let d = d + 1;
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(x) {
                overlap += 1;
            }
            if seen_a.contains(y) {
                overlap += 1;
            }
        }
        seen_a.insert(x);
        seen_b.insert(y);
        out.push(overlap as f64 / (2 * d - overlap) as f64);
    }
    out
}

/// Sums the weighted agreements from the deepest (smallest) term upward.
///
/// The extrapolated value is evaluated as `A_D + (1-p) Σ p^(d-1) (A_d - A_D)`,
/// which equals `(1-p) Σ p^(d-1) A_d + A_D p^D` because `(1-p) Σ_{d≤D} p^(d-1)
/// = 1 - p^D`, and is exact (1.0 / 0.0) for identical and disjoint lists.
fn rbo_from_agreements(agreements: &[f64], p: f64, mode: RboMode) -> f64 {
    let depth = agreements.len();
    let last = agreements[depth - 1];
    let tail_weight = p.powi(depth as i32);
    let mut deviation = 0.0;
    for d in (1..=depth).rev() {
        deviation += p.powi(d as i32 - 1) * (agreements[d - 1] - last);
    }
    let extrapolated = (last + (1.0 - p) * deviation).clamp(0.0, 1.0);
    match mode {
        RboMode::Extrapolated => extrapolated,
        RboMode::Base => (extrapolated - last * tail_weight).clamp(0.0, extrapolated),
    }
}
