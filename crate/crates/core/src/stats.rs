//! Agent-level permutation tests over similarity records.
//!
//! Group membership of a record is derived from labels attached to its two
//! agents: for a browser (or engine) effect a record belongs to group `a`
//! when both agents carry label `a`, to group `b` when both carry `b`, and
//! to neither otherwise. The null distribution reshuffles labels across
//! agents, so every record of an agent changes group together. Query effects
//! compare the same agent pair under two queries and flip the pair's two
//! values.
//!
//! Each replicate draws from its own seeded stream, so p-values do not
//! depend on the execution strategy.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{Metric, SimilarityRecord};
use crate::exec::Execution;
use crate::ids::{AgentId, BrowserId, EngineId, QueryId};
use crate::seed::SeedKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("insufficient groups: {0}")]
    InsufficientGroups(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("agent {0} carries two different labels")]
    InconsistentLabel(AgentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "kebab-case")]
pub enum Effect {
    Browser { a: BrowserId, b: BrowserId },
    EnginePair { a: EngineId, b: EngineId },
    Query { a: QueryId, b: QueryId },
}

impl Effect {
    pub fn kind(&self) -> &'static str {
        match self {
            Effect::Browser { .. } => "browser",
            Effect::EnginePair { .. } => "engine-pair",
            Effect::Query { .. } => "query",
        }
    }

    fn labels(&self) -> (&str, &str) {
        match self {
            Effect::Browser { a, b } => (a.as_str(), b.as_str()),
            Effect::EnginePair { a, b } => (a.as_str(), b.as_str()),
            Effect::Query { a, b } => (a.as_str(), b.as_str()),
        }
    }
}

/// The slice of records a test ran on, for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestScope {
    pub query: Option<QueryId>,
    pub engine: Option<EngineId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTest {
    pub effect: Effect,
    pub response: Metric,
    pub scope: TestScope,
    /// Mean of group `a` minus mean of group `b`.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub n_a: usize,
    pub n_b: usize,
    /// What moves together under permutation.
    pub grouping: String,
}

/// Two-sided permutation test of `effect` on `response`.
pub fn permutation_test(
    records: &[SimilarityRecord],
    effect: &Effect,
    response: Metric,
    permutations: usize,
    seed: u64,
    execution: Execution,
) -> Result<EffectTest, StatsError> {
    if permutations == 0 {
        return Err(StatsError::InvalidParams("at least one permutation is required".into()));
    }
    let (la, lb) = effect.labels();
    if la == lb {
        return Err(StatsError::InvalidParams(format!("both groups are labelled {la:?}")));
    }
    let design = match effect {
        Effect::Query { a, b } => Design::paired(records, a, b, response)?,
        Effect::Browser { .. } | Effect::EnginePair { .. } => Design::labelled(records, effect, response)?,
    };
    let observed = design.observed();
    let (n_a, n_b) = design.sizes();
    let rng_key = SeedKey::new(seed)
        .str(effect.kind())
        .str(la)
        .str(lb)
        .str(response.as_str());
    let tol = 1e-12 * observed.abs().max(1.0);
    let extreme: usize = execution
        .map_range(permutations, |r| {
            let mut rng = rng_key.clone().num(r as u64).rng();
            match design.replicate(&mut rng) {
                Some(s) => usize::from(s.abs() >= observed.abs() - tol),
                None => 1,
            }
        })
        .into_iter()
        .sum();
    Ok(EffectTest {
        effect: effect.clone(),
        response,
        scope: TestScope::default(),
        statistic: observed,
        p_value: (1 + extreme) as f64 / (permutations + 1) as f64,
        permutations,
        n_a,
        n_b,
        grouping: match design {
            Design::Labelled { .. } => "agent".into(),
            Design::Paired { .. } => "agent-pair".into(),
        },
    })
}

enum Design {
    Labelled {
        /// Record endpoints as indices into `labels`, with the record value.
        records: Vec<(usize, usize, f64)>,
        /// `true` for label `a`, per agent in scope.
        labels: Vec<bool>,
    },
    Paired {
        /// (value under a, value under b) per agent pair.
        pairs: Vec<(f64, f64)>,
    },
}

fn mean_diff(sa: f64, na: usize, sb: f64, nb: usize) -> Option<f64> {
    (na > 0 && nb > 0).then(|| sa / na as f64 - sb / nb as f64)
}

type PairedValues = (Option<f64>, Option<f64>);

impl Design {
    fn labelled(records: &[SimilarityRecord], effect: &Effect, response: Metric) -> Result<Self, StatsError> {
        let (la, lb) = effect.labels();
        let label_of = |r: &SimilarityRecord, first: bool| -> String {
            match (effect, first) {
                (Effect::Browser { .. }, true) => r.browser1.to_string(),
                (Effect::Browser { .. }, false) => r.browser2.to_string(),
                (_, true) => r.engine1.to_string(),
                (_, false) => r.engine2.to_string(),
            }
        };
        let mut agent_label: BTreeMap<&AgentId, String> = BTreeMap::new();
        for r in records {
            for (agent, first) in [(&r.agent1, true), (&r.agent2, false)] {
                let l = label_of(r, first);
                if let Some(prev) = agent_label.insert(agent, l.clone()) {
                    if prev != l {
                        return Err(StatsError::InconsistentLabel(agent.clone()));
                    }
                }
            }
        }
        let in_scope: Vec<(&AgentId, bool)> = agent_label
            .iter()
            .filter(|(_, l)| l.as_str() == la || l.as_str() == lb)
            .map(|(a, l)| (*a, l.as_str() == la))
            .collect();
        let index: HashMap<&AgentId, usize> = in_scope.iter().enumerate().map(|(i, (a, _))| (*a, i)).collect();
        let labels: Vec<bool> = in_scope.iter().map(|(_, is_a)| *is_a).collect();
        let recs: Vec<(usize, usize, f64)> = records
            .iter()
            .filter_map(|r| Some((*index.get(&r.agent1)?, *index.get(&r.agent2)?, response.of(r))))
            .collect();
        let d = Design::Labelled { records: recs, labels };
        let (na, nb) = d.sizes();
        if na < 2 || nb < 2 {
            return Err(StatsError::InsufficientGroups(format!(
                "{la:?} has {na} records and {lb:?} has {nb}; each needs at least 2"
            )));
        }
        Ok(d)
    }

    fn paired(records: &[SimilarityRecord], a: &QueryId, b: &QueryId, response: Metric) -> Result<Self, StatsError> {
        let mut by_pair: BTreeMap<(&AgentId, &AgentId), PairedValues> = BTreeMap::new();
        for r in records {
            let slot = by_pair.entry((&r.agent1, &r.agent2)).or_default();
            if r.query == *a {
                slot.0 = Some(response.of(r));
            } else if r.query == *b {
                slot.1 = Some(response.of(r));
            }
        }
        let pairs: Vec<(f64, f64)> = by_pair
            .into_values()
            .filter_map(|(x, y)| Some((x?, y?)))
            .collect();
        if pairs.len() < 2 {
            return Err(StatsError::InsufficientGroups(format!(
                "only {} agent pairs have records for both {a} and {b}",
                pairs.len()
            )));
        }
        Ok(Design::Paired { pairs })
    }

    fn sizes(&self) -> (usize, usize) {
        match self {
            Design::Labelled { records, labels } => {
                let mut n = (0, 0);
                for &(i, j, _) in records {
                    match (labels[i], labels[j]) {
                        (true, true) => n.0 += 1,
                        (false, false) => n.1 += 1,
                        _ => {}
                    }
                }
                n
            }
            Design::Paired { pairs } => (pairs.len(), pairs.len()),
        }
    }

    fn statistic(&self, labels: &[bool], flips: Option<&[bool]>) -> Option<f64> {
        match self {
            Design::Labelled { records, .. } => {
                let (mut sa, mut na, mut sb, mut nb) = (0.0, 0, 0.0, 0);
                for &(i, j, v) in records {
                    match (labels[i], labels[j]) {
                        (true, true) => {
                            sa += v;
                            na += 1;
                        }
                        (false, false) => {
                            sb += v;
                            nb += 1;
                        }
                        _ => {}
                    }
                }
                mean_diff(sa, na, sb, nb)
            }
            Design::Paired { pairs } => {
                let (mut sa, mut sb) = (0.0, 0.0);
                for (k, &(x, y)) in pairs.iter().enumerate() {
                    if flips.is_some_and(|f| f[k]) {
                        sa += y;
                        sb += x;
                    } else {
                        sa += x;
                        sb += y;
                    }
                }
                mean_diff(sa, pairs.len(), sb, pairs.len())
            }
        }
    }

    fn observed(&self) -> f64 {
        match self {
            Design::Labelled { labels, .. } => self.statistic(labels, None),
            Design::Paired { .. } => self.statistic(&[], None),
        }
        .expect("groups checked nonempty")
    }

    fn replicate<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        match self {
            Design::Labelled { labels, .. } => {
                let mut l = labels.clone();
                l.shuffle(rng);
                self.statistic(&l, None)
            }
            Design::Paired { pairs } => {
                let flips: Vec<bool> = (0..pairs.len()).map(|_| rng.gen()).collect();
                self.statistic(&[], Some(&flips))
            }
        }
    }
}

/// Runs the browser test for every (query, engine) slice that has exactly
/// two browsers, on every response.
pub fn browser_tests(
    records: &[SimilarityRecord],
    permutations: usize,
    seed: u64,
    execution: Execution,
) -> Vec<EffectTest> {
    let mut slices: BTreeMap<(&QueryId, &EngineId), Vec<SimilarityRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.engine1 == r.engine2) {
        slices.entry((&r.query, &r.engine1)).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for ((query, engine), recs) in slices {
        let browsers: BTreeSet<&BrowserId> = recs.iter().flat_map(|r| [&r.browser1, &r.browser2]).collect();
        let [a, b]: [&BrowserId; 2] = match browsers.into_iter().collect::<Vec<_>>().try_into() {
            Ok(v) => v,
            Err(_) => continue,
        };
        let effect = Effect::Browser { a: a.clone(), b: b.clone() };
        let slice_seed = SeedKey::new(seed).str(query.as_str()).str(engine.as_str()).finish();
        for response in Metric::ALL {
            if let Ok(mut t) = permutation_test(&recs, &effect, response, permutations, slice_seed, execution) {
                t.scope = TestScope {
                    query: Some(query.clone()),
                    engine: Some(engine.clone()),
                };
                out.push(t);
            }
        }
    }
    out
}

pub const ALPHA: f64 = 0.05;

/// Renders a p-value the way significance tables print them: four decimals,
/// no leading zero, trailing zeros dropped, `<.0001` below that.
pub fn format_p(p: f64) -> String {
    if p < 0.0001 {
        return "<.0001".into();
    }
    let s = format!("{p:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    let s = s.strip_prefix('0').unwrap_or(s);
    if s.is_empty() {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Column order of the significance table.
pub const SUMMARY_COLUMNS: [Metric; 4] = [Metric::JiOverall, Metric::JiTop10, Metric::Rbo80, Metric::Rbo95];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub query: String,
    pub engine: String,
    /// Per [`SUMMARY_COLUMNS`]; `None` when not significant or not tested.
    pub cells: [Option<f64>; 4],
}

/// One row per tested (query, engine); only p < [`ALPHA`] is populated.
pub fn effect_summary(tests: &[EffectTest]) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<(String, String), [Option<f64>; 4]> = BTreeMap::new();
    for t in tests {
        let key = (
            t.scope.query.as_ref().map_or("-".into(), |q| q.to_string()),
            t.scope.engine.as_ref().map_or("-".into(), |e| e.to_string()),
        );
        let row = rows.entry(key).or_default();
        if t.p_value < ALPHA {
            let col = SUMMARY_COLUMNS.iter().position(|m| *m == t.response).expect("known metric");
            row[col] = Some(t.p_value);
        }
    }
    rows.into_iter()
        .map(|((query, engine), cells)| SummaryRow { query, engine, cells })
        .collect()
}

/// CSV with `-` marking non-significant cells.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("query,engine");
    for m in SUMMARY_COLUMNS {
        write!(out, ",{m}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", csv_field(&r.query), csv_field(&r.engine)).unwrap();
        for c in r.cells {
            out.push(',');
            out.push_str(&c.map_or("-".into(), format_p));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
