//! All-pairs similarity records and their engine×engine aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ids::{AgentId, BrowserId, EngineId, MachineId, QueryId};
use crate::metrics::{self, MetricError, RankedList, RboParams};
use crate::orchestrator::AgentConfig;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("need at least two agents for query {query}, got {n}")]
    InsufficientAgents { query: QueryId, n: usize },
    #[error("lists from several queries passed together ({0} and {1})")]
    MixedQueries(QueryId, QueryId),
    #[error("agent {0} contributes more than one list")]
    DuplicateAgent(AgentId),
    #[error("no records to aggregate")]
    NoRecords,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("malformed matrix table: {0}")]
    Table(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One agent's extracted list for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRanking {
    pub agent: AgentConfig,
    pub query: QueryId,
    pub list: RankedList,
}

/// The four similarity responses carried by every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    JiOverall,
    JiTop10,
    #[serde(rename = "rbo_95")]
    Rbo95,
    #[serde(rename = "rbo_80")]
    Rbo80,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::JiOverall, Metric::JiTop10, Metric::Rbo95, Metric::Rbo80];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::JiOverall => "ji_overall",
            Metric::JiTop10 => "ji_top10",
            Metric::Rbo95 => "rbo_95",
            Metric::Rbo80 => "rbo_80",
        }
    }

    pub fn of(self, r: &SimilarityRecord) -> f64 {
        match self {
            Metric::JiOverall => r.ji_overall,
            Metric::JiTop10 => r.ji_top10,
            Metric::Rbo95 => r.rbo_95,
            Metric::Rbo80 => r.rbo_80,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?} (expected ji_overall, ji_top10, rbo_95 or rbo_80)"))
    }
}

/// Parameters behind the record fields. The field names stay fixed; `topk`
/// feeds `ji_top10`, `rbo_high` feeds `rbo_95` and `rbo_low` feeds `rbo_80`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub topk: usize,
    pub rbo_high: RboParams,
    pub rbo_low: RboParams,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            topk: 10,
            rbo_high: RboParams::extrapolated(0.95).expect("valid"),
            rbo_low: RboParams::extrapolated(0.8).expect("valid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub query: QueryId,
    pub agent1: AgentId,
    pub agent2: AgentId,
    pub machine1: MachineId,
    pub machine2: MachineId,
    pub machine_combination: String,
    pub browser1: BrowserId,
    pub browser2: BrowserId,
    pub engine1: EngineId,
    pub engine2: EngineId,
    pub ji_overall: f64,
    pub ji_top10: f64,
    pub rbo_95: f64,
    pub rbo_80: f64,
    /// Depth at which both RBO values were evaluated.
    pub rbo_depth: usize,
}

impl SimilarityRecord {
    pub fn engine_pair(&self) -> (&EngineId, &EngineId) {
        ordered(&self.engine1, &self.engine2)
    }

    pub fn involves(&self, agent: &AgentId) -> bool {
        self.agent1 == *agent || self.agent2 == *agent
    }
}

fn ordered<T: Ord>(a: T, b: T) -> (T, T) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Unordered key for the two hosts behind a pair, e.g. `m03+m11`.
pub fn machine_combination(a: &MachineId, b: &MachineId) -> String {
    let (x, y) = ordered(a, b);
    format!("{x}+{y}")
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Compares every unordered pair of agents for one query. Records come out
/// sorted by `(agent1, agent2)` with `agent1 < agent2`.
pub fn pairwise_compare(
    lists: &[AgentRanking],
    settings: &MetricSettings,
    execution: Execution,
) -> Result<Vec<SimilarityRecord>, CompareError> {
    let Some(first) = lists.first() else {
        return Err(CompareError::InsufficientAgents {
            query: QueryId::new(""),
            n: 0,
        });
    };
    if let Some(other) = lists.iter().find(|l| l.query != first.query) {
        return Err(CompareError::MixedQueries(first.query.clone(), other.query.clone()));
    }
    if lists.len() < 2 {
        return Err(CompareError::InsufficientAgents {
            query: first.query.clone(),
            n: lists.len(),
        });
    }
    let mut sorted: Vec<&AgentRanking> = lists.iter().collect();
    sorted.sort_by(|a, b| a.agent.agent.cmp(&b.agent.agent));
    if let Some(w) = sorted.windows(2).find(|w| w[0].agent.agent == w[1].agent.agent) {
        return Err(CompareError::DuplicateAgent(w[0].agent.agent.clone()));
    }
    let n = sorted.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    execution
        .map_slice(&pairs, |&(i, j)| compare_pair(sorted[i], sorted[j], settings))
        .into_iter()
        .collect()
}

fn compare_pair(a: &AgentRanking, b: &AgentRanking, s: &MetricSettings) -> Result<SimilarityRecord, CompareError> {
    let high = metrics::rbo(&a.list, &b.list, s.rbo_high)?;
    let low = metrics::rbo(&a.list, &b.list, s.rbo_low)?;
    let depth = match high.params {
        Some(metrics::ScoreParams::Rbo { depth, .. }) => depth,
        _ => unreachable!("rbo reports its depth"),
    };
    Ok(SimilarityRecord {
        query: a.query.clone(),
        agent1: a.agent.agent.clone(),
        agent2: b.agent.agent.clone(),
        machine1: a.agent.machine.clone(),
        machine2: b.agent.machine.clone(),
        machine_combination: machine_combination(&a.agent.machine, &b.agent.machine),
        browser1: a.agent.browser.clone(),
        browser2: b.agent.browser.clone(),
        engine1: a.agent.engine.clone(),
        engine2: b.agent.engine.clone(),
        ji_overall: metrics::jaccard_overall(&a.list, &b.list)?.value,
        ji_top10: metrics::jaccard_topk(&a.list, &b.list, s.topk)?.value,
        rbo_95: high.value,
        rbo_80: low.value,
        rbo_depth: depth,
    })
}

/// Which agent pairs feed a matrix: both agents on one browser, or agents on
/// different browsers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BrowserScope {
    Within(BrowserId),
    Cross,
}

impl BrowserScope {
    pub fn admits(&self, r: &SimilarityRecord) -> bool {
        match self {
            BrowserScope::Within(b) => r.browser1 == *b && r.browser2 == *b,
            BrowserScope::Cross => r.browser1 != r.browser2,
        }
    }

    /// The within-browser scopes for every browser present plus `Cross`
    /// when any cross-browser pair exists.
    pub fn all_in(records: &[SimilarityRecord]) -> Vec<BrowserScope> {
        let browsers: BTreeSet<&BrowserId> = records.iter().flat_map(|r| [&r.browser1, &r.browser2]).collect();
        let mut out: Vec<BrowserScope> = browsers.into_iter().map(|b| BrowserScope::Within(b.clone())).collect();
        if records.iter().any(|r| r.browser1 != r.browser2) {
            out.push(BrowserScope::Cross);
        }
        out
    }
}

impl fmt::Display for BrowserScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrowserScope::Within(b) => write!(f, "{b}"),
            BrowserScope::Cross => f.write_str("cross"),
        }
    }
}

impl FromStr for BrowserScope {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "cross" {
            BrowserScope::Cross
        } else {
            BrowserScope::Within(BrowserId::new(s))
        })
    }
}

impl Serialize for BrowserScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BrowserScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub mean: f64,
    pub count: usize,
}

/// Mean similarity per engine pair. Cells are stored once per unordered pair
/// so lookups in either orientation return the same value.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub query: QueryId,
    pub metric: Metric,
    pub scope: BrowserScope,
    pub engines: Vec<EngineId>,
    cells: BTreeMap<(EngineId, EngineId), MatrixCell>,
}

impl SimilarityMatrix {
    pub fn new(query: QueryId, metric: Metric, scope: BrowserScope, engines: Vec<EngineId>) -> Self {
        let mut engines = engines;
        engines.sort();
        engines.dedup();
        SimilarityMatrix {
            query,
            metric,
            scope,
            engines,
            cells: BTreeMap::new(),
        }
    }

    /// `None` marks an empty bucket.
    pub fn cell(&self, a: &EngineId, b: &EngineId) -> Option<MatrixCell> {
        let (x, y) = ordered(a, b);
        self.cells.get(&(x.clone(), y.clone())).copied()
    }

    pub fn set(&mut self, a: &EngineId, b: &EngineId, cell: MatrixCell) {
        for e in [a, b] {
            if let Err(i) = self.engines.binary_search(e) {
                self.engines.insert(i, e.clone());
            }
        }
        let (x, y) = ordered(a, b);
        self.cells.insert((x.clone(), y.clone()), cell);
    }

    /// Present cells with their canonical `(engine_i <= engine_j)` key.
    pub fn cells(&self) -> impl Iterator<Item = (&EngineId, &EngineId, MatrixCell)> {
        self.cells.iter().map(|((a, b), c)| (a, b, *c))
    }

    pub fn total_count(&self) -> usize {
        self.cells.values().map(|c| c.count).sum()
    }
}

/// Averages `metric` over the records admitted by `scope`, bucketed by engine
/// pair. Engines seen anywhere in `records` get rows even when their buckets
/// are empty.
pub fn aggregate_matrix(
    records: &[SimilarityRecord],
    metric: Metric,
    scope: &BrowserScope,
) -> Result<SimilarityMatrix, CompareError> {
    let first = records.first().ok_or(CompareError::NoRecords)?;
    if let Some(other) = records.iter().find(|r| r.query != first.query) {
        return Err(CompareError::MixedQueries(first.query.clone(), other.query.clone()));
    }
    let engines: Vec<EngineId> = records
        .iter()
        .flat_map(|r| [r.engine1.clone(), r.engine2.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut sums: BTreeMap<(&EngineId, &EngineId), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| scope.admits(r)) {
        let e = sums.entry(r.engine_pair()).or_default();
        e.0 += metric.of(r);
        e.1 += 1;
    }
    let mut m = SimilarityMatrix::new(first.query.clone(), metric, scope.clone(), engines);
    for ((a, b), (sum, count)) in sums {
        m.set(a, b, MatrixCell {
            mean: sum / count as f64,
            count,
        });
    }
    Ok(m)
}

/// Every metric × browser scope matrix for one query's records.
pub fn all_matrices(records: &[SimilarityRecord]) -> Result<Vec<SimilarityMatrix>, CompareError> {
    let mut out = Vec::new();
    for scope in BrowserScope::all_in(records) {
        for metric in Metric::ALL {
            out.push(aggregate_matrix(records, metric, &scope)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub below: usize,
    pub total: usize,
}

impl Census {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.below as f64 / self.total as f64
        }
    }
}

/// Counts present cross-engine cells whose mean is strictly below `threshold`.
pub fn threshold_census<'a>(matrices: impl IntoIterator<Item = &'a SimilarityMatrix>, threshold: f64) -> Census {
    let mut c = Census { below: 0, total: 0 };
    for m in matrices {
        for (a, b, cell) in m.cells() {
            if a != b {
                c.total += 1;
                if cell.mean < threshold {
                    c.below += 1;
                }
            }
        }
    }
    c
}

#[derive(Debug, Serialize, Deserialize)]
struct LongRow {
    query: QueryId,
    metric: Metric,
    browser_scope: BrowserScope,
    engine_i: EngineId,
    engine_j: EngineId,
    mean: String,
    count: usize,
}

/// Long-form CSV: `query,metric,browser_scope,engine_i,engine_j,mean,count`,
/// one row per present cell in canonical orientation. Means are written with
/// the shortest representation that round-trips.
pub fn write_matrices_csv<W: Write>(matrices: &[SimilarityMatrix], out: W) -> Result<(), CompareError> {
    let mut w = csv::Writer::from_writer(out);
    for m in matrices {
        for (a, b, cell) in m.cells() {
            w.serialize(LongRow {
                query: m.query.clone(),
                metric: m.metric,
                browser_scope: m.scope.clone(),
                engine_i: a.clone(),
                engine_j: b.clone(),
                mean: format!("{}", cell.mean),
                count: cell.count,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the long form back, grouping rows into one matrix per
/// `(query, metric, browser_scope)` in first-appearance order.
pub fn read_matrices_csv<R: Read>(input: R) -> Result<Vec<SimilarityMatrix>, CompareError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<SimilarityMatrix> = Vec::new();
    for (line, row) in rdr.deserialize::<LongRow>().enumerate() {
        let row = row?;
        let mean: f64 = row
            .mean
            .parse()
            .map_err(|_| CompareError::Table(format!("row {}: bad mean {:?}", line + 2, row.mean)))?;
        if !(0.0..=1.0).contains(&mean) {
            return Err(CompareError::Table(format!("row {}: mean {mean} outside [0,1]", line + 2)));
        }
        let idx = match out
            .iter()
            .position(|m| m.query == row.query && m.metric == row.metric && m.scope == row.browser_scope)
        {
            Some(i) => i,
            None => {
                out.push(SimilarityMatrix::new(row.query.clone(), row.metric, row.browser_scope.clone(), vec![]));
                out.len() - 1
            }
        };
        if out[idx].cell(&row.engine_i, &row.engine_j).is_some() {
            return Err(CompareError::Table(format!(
                "row {}: cell {}/{} given twice",
                line + 2,
                row.engine_i,
                row.engine_j
            )));
        }
        out[idx].set(&row.engine_i, &row.engine_j, MatrixCell { mean, count: row.count });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Heatmap<'a> {
    query: &'a QueryId,
    metric: Metric,
    browser_scope: &'a BrowserScope,
    engines: &'a [EngineId],
    /// Row-major, `null` for empty buckets.
    mean: Vec<Vec<Option<f64>>>,
    count: Vec<Vec<usize>>,
}

/// Dense square grids per matrix for plotting tools.
pub fn heatmap_json(matrices: &[SimilarityMatrix]) -> serde_json::Value {
    let maps: Vec<Heatmap<'_>> = matrices
        .iter()
        .map(|m| Heatmap {
            query: &m.query,
            metric: m.metric,
            browser_scope: &m.scope,
            engines: &m.engines,
            mean: m
                .engines
                .iter()
                .map(|a| m.engines.iter().map(|b| m.cell(a, b).map(|c| c.mean)).collect())
                .collect(),
            count: m
                .engines
                .iter()
                .map(|a| m.engines.iter().map(|b| m.cell(a, b).map_or(0, |c| c.count)).collect())
                .collect(),
        })
        .collect();
    serde_json::to_value(maps).expect("heatmap serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ranking(agent: &str, machine: &str, browser: &str, engine: &str, items: &[&str]) -> AgentRanking {
        AgentRanking {
            agent: AgentConfig {
                agent: AgentId::new(agent),
                machine: MachineId::new(machine),
                browser: BrowserId::new(browser),
                engine: EngineId::new(engine),
            },
            query: QueryId::new("q"),
            list: RankedList::new(items.iter().copied()).unwrap(),
        }
    }

    #[test]
    fn three_agents_three_records() {
        let lists = vec![
            ranking("c", "m2", "b1", "e1", &["x", "y"]),
            ranking("a", "m1", "b1", "e1", &["x", "y"]),
            ranking("b", "m1", "b2", "e2", &["y", "z"]),
        ];
        let recs = pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential).unwrap();
        assert_eq!(recs.len(), 3);
        let keys: Vec<_> = recs.iter().map(|r| (r.agent1.as_str(), r.agent2.as_str())).collect();
        assert_eq!(keys, vec![("a", "b"), ("a", "c"), ("b", "c")]);
        assert_eq!(recs[0].machine_combination, "m1+m1");
        assert_eq!(recs[1].machine_combination, "m1+m2");
        assert_eq!(recs[1].ji_overall, 1.0);
    }

    #[test]
    fn identical_lists_all_ones() {
        let items = ["u1", "u2", "u3", "u4"];
        let lists: Vec<_> = (0..5).map(|i| ranking(&format!("a{i}"), "m", "b", "e", &items)).collect();
        for r in pairwise_compare(&lists, &MetricSettings::default(), Execution::Parallel).unwrap() {
            for m in Metric::ALL {
                assert_eq!(m.of(&r), 1.0);
            }
        }
    }

    #[test]
    fn too_few_agents() {
        let lists = vec![ranking("a", "m", "b", "e", &["x"])];
        assert!(matches!(
            pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential),
            Err(CompareError::InsufficientAgents { n: 1, .. })
        ));
    }

    #[test]
    fn single_pair_cell() {
        let lists = vec![
            ranking("a", "m1", "b", "e1", &["x", "y", "z"]),
            ranking("b", "m2", "b", "e2", &["x", "u", "v"]),
        ];
        let recs = pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential).unwrap();
        let m = aggregate_matrix(&recs, Metric::JiOverall, &BrowserScope::Within("b".into())).unwrap();
        let c = m.cell(&"e2".into(), &"e1".into()).unwrap();
        assert_eq!(c.count, 1);
        assert_eq!(c.mean, 0.2);
        assert_eq!(m.cell(&"e1".into(), &"e2".into()), Some(c));
        assert_eq!(m.cell(&"e1".into(), &"e1".into()), None);
    }

    #[test]
    fn scopes_partition_records() {
        let lists = vec![
            ranking("a", "m1", "b1", "e1", &["x"]),
            ranking("b", "m1", "b2", "e1", &["x"]),
            ranking("c", "m2", "b1", "e2", &["x"]),
            ranking("d", "m2", "b2", "e2", &["y"]),
        ];
        let recs = pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential).unwrap();
        let scopes = BrowserScope::all_in(&recs);
        assert_eq!(scopes.len(), 3);
        let total: usize = scopes
            .iter()
            .map(|s| aggregate_matrix(&recs, Metric::Rbo80, s).unwrap().total_count())
            .sum();
        assert_eq!(total, recs.len());
    }

    #[test]
    fn census_counts_off_diagonal_only() {
        let mut m = SimilarityMatrix::new("q".into(), Metric::JiOverall, BrowserScope::Cross, vec![]);
        m.set(&"a".into(), &"a".into(), MatrixCell { mean: 0.1, count: 1 });
        m.set(&"a".into(), &"b".into(), MatrixCell { mean: 0.1, count: 1 });
        m.set(&"b".into(), &"c".into(), MatrixCell { mean: 0.35, count: 1 });
        assert_eq!(threshold_census([&m], 0.35), Census { below: 1, total: 2 });
        assert_eq!(threshold_census([&m], 1.0).below, 2);
    }

    #[test]
    fn csv_round_trip() {
        let lists = vec![
            ranking("a", "m1", "b1", "e1", &["x", "y", "z"]),
            ranking("b", "m2", "b1", "e2", &["z", "y", "w"]),
            ranking("c", "m3", "b2", "e2", &["y"]),
        ];
        let recs = pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential).unwrap();
        let ms = all_matrices(&recs).unwrap();
        let mut buf = Vec::new();
        write_matrices_csv(&ms, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("query,metric,browser_scope,engine_i,engine_j,mean,count\n"));
        let back = read_matrices_csv(&buf[..]).unwrap();
        let present: Vec<_> = ms.iter().filter(|m| m.cells().next().is_some()).collect();
        assert_eq!(back.len(), present.len());
        for (a, b) in back.iter().zip(present) {
            assert_eq!(a.cells().collect::<Vec<_>>(), b.cells().collect::<Vec<_>>());
        }
        let json = heatmap_json(&ms);
        assert_eq!(json[0]["engines"].as_array().unwrap().len(), 2);
    }
}
