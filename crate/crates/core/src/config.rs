//! Fleet configuration files.
//!
//! A config is TOML. Agents are listed individually under `[[agents]]` or
//! generated per engine under `[[groups]]` (one agent per browser on each of
//! `machines` hosts). Every diagnostic carries the line it refers to.
//!
//! ```toml
//! run_id = "demo"
//! seed = 7
//! start = "2020-02-26T08:00:00Z"
//! queries = ["us elections"]
//! domains = ["nytimes.com", "twitter.com"]
//!
//! [[engines]]
//! id = "alpha"
//! layout = "classic"
//! volatility = 0.2
//!
//! [[groups]]
//! engine = "alpha"
//! browsers = ["browser-a", "browser-b"]
//! machines = 2
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::compare::MetricSettings;
use crate::ids::{AgentId, BrowserId, EngineId, MachineId, QueryId};
use crate::metrics::{RboMode, RboParams};
use crate::orchestrator::{plan_fleet, AgentConfig, AgentPlan, FaultKind, InjectedFault, PlanError, Schedule};
use crate::serp::ExtractorRegistry;
use crate::sim::{cross_engine_pools, specs_from_pools, Layout, PoolRequest, SimEngineSpec, SimError, Simulator};

/// A config problem, located by 1-based line when the cause has one.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

fn default_depth() -> usize {
    50
}
fn default_cadence() -> u32 {
    420
}
fn default_gap() -> u32 {
    240
}
fn default_max_session() -> u32 {
    180
}
fn default_jitter_ms() -> u64 {
    2000
}
fn default_jitter_bound() -> u32 {
    5
}
fn default_pool() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run_id: String,
    seed: u64,
    #[serde(default = "default_depth")]
    depth: usize,
    #[serde(default = "default_cadence")]
    cadence_seconds: u32,
    #[serde(default = "default_gap")]
    gap_seconds: u32,
    #[serde(default = "default_max_session")]
    max_session_seconds: u32,
    start: Spanned<String>,
    #[serde(default)]
    clock: ClockKind,
    #[serde(default = "default_jitter_ms")]
    jitter_ms: u64,
    #[serde(default = "default_jitter_bound")]
    jitter_bound_seconds: u32,
    queries: Spanned<Vec<String>>,
    #[serde(default = "default_pool")]
    pool_size: usize,
    #[serde(default)]
    domains: Vec<String>,
    #[serde(default)]
    default_overlap: f64,
    #[serde(default)]
    overlap: Vec<Spanned<RawOverlap>>,
    engines: Vec<Spanned<RawEngine>>,
    #[serde(default)]
    agents: Vec<Spanned<RawAgent>>,
    #[serde(default)]
    groups: Vec<Spanned<RawGroup>>,
    #[serde(default)]
    faults: Vec<Spanned<RawFault>>,
    #[serde(default)]
    analysis: AnalysisSettings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverlap {
    a: String,
    b: String,
    value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    id: String,
    layout: Layout,
    #[serde(default)]
    volatility: f64,
    #[serde(default)]
    browser_volatility: BTreeMap<String, f64>,
    results: Option<usize>,
    per_page: Option<usize>,
    ads_per_page: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: String,
    machine: String,
    browser: String,
    engine: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    engine: String,
    browsers: Vec<String>,
    machines: usize,
    /// Numbering starts here, so several groups can share an engine.
    #[serde(default)]
    first_machine: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    kind: FaultKind,
    agent: Option<String>,
    engine: Option<String>,
    browser: Option<String>,
    query: Option<String>,
    /// Limit to the first `count` matching agents in id order.
    count: Option<usize>,
}

/// Parameters for `analyze`. CLI flags override them.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub topk: usize,
    pub rbo_p: [f64; 2],
    pub rbo_mode: RboModeName,
    pub permutations: usize,
    pub profile_k: usize,
    pub census_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RboModeName {
    Base,
    Extrapolated,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            topk: 10,
            rbo_p: [0.95, 0.8],
            rbo_mode: RboModeName::Extrapolated,
            permutations: 2000,
            profile_k: 20,
            census_threshold: 0.35,
        }
    }
}

impl AnalysisSettings {
    pub fn metric_settings(&self, depth: usize) -> Result<MetricSettings, String> {
        let mode = match self.rbo_mode {
            RboModeName::Base => RboMode::Base,
            RboModeName::Extrapolated => RboMode::Extrapolated,
        };
        if self.topk == 0 {
            return Err("topk must be at least 1".into());
        }
        let p = |p: f64| RboParams::new(p, depth, mode).map_err(|e| e.to_string());
        Ok(MetricSettings {
            topk: self.topk,
            rbo_high: p(self.rbo_p[0])?,
            rbo_low: p(self.rbo_p[1])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub id: EngineId,
    pub layout: Layout,
    pub volatility: f64,
    pub browser_volatility: BTreeMap<BrowserId, f64>,
    pub results: usize,
    pub per_page: usize,
    pub ads_per_page: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub run_id: String,
    pub seed: u64,
    pub depth: usize,
    pub schedule: Schedule,
    pub start: DateTime<Utc>,
    pub clock: ClockKind,
    pub jitter_ms: u64,
    pub jitter_bound_seconds: u32,
    pub queries: Vec<QueryId>,
    pub pool_size: usize,
    pub domains: Vec<String>,
    /// Full symmetric matrix aligned with `engines`.
    pub overlap: Vec<Vec<f64>>,
    pub engines: Vec<EngineConfig>,
    pub agents: Vec<AgentConfig>,
    pub faults: BTreeMap<AgentId, Vec<InjectedFault>>,
    pub analysis: AnalysisSettings,
}

struct Locator<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Locator<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn at<T>(&self, s: &Spanned<T>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.into(),
            line: Some(self.line_of(s.span().start)),
            message: message.into(),
        }
    }

    fn bare(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.into(),
            line: None,
            message: message.into(),
        }
    }
}

impl FleetConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            message: e.to_string(),
        })?;
        FleetConfig::parse(&text, &origin)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let loc = Locator { text, origin };
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            origin: origin.into(),
            line: e.span().map(|s| loc.line_of(s.start)),
            message: e.message().trim().to_string(),
        })?;

        let start = DateTime::parse_from_rfc3339(raw.start.get_ref())
            .map_err(|e| loc.at(&raw.start, format!("start: {e}")))?
            .with_timezone(&Utc);
        if raw.queries.get_ref().is_empty() {
            return Err(loc.at(&raw.queries, "queries must not be empty"));
        }
        let mut seen_q = BTreeSet::new();
        for q in raw.queries.get_ref() {
            if !seen_q.insert(q) {
                return Err(loc.at(&raw.queries, format!("query {q:?} listed twice")));
            }
        }
        if raw.depth == 0 {
            return Err(loc.bare("depth must be at least 1"));
        }
        if u64::from(raw.jitter_bound_seconds) * 1000 < raw.jitter_ms {
            return Err(loc.bare(format!(
                "jitter_ms {} exceeds the {} s synchronisation bound",
                raw.jitter_ms, raw.jitter_bound_seconds
            )));
        }

        let mut engines = Vec::new();
        let mut engine_line = BTreeMap::new();
        for e in &raw.engines {
            let r = e.get_ref();
            let id = EngineId::new(r.id.clone());
            if engine_line.insert(id.clone(), e.span().start).is_some() {
                return Err(loc.at(e, format!("engine {id} defined twice")));
            }
            engines.push(EngineConfig {
                id,
                layout: r.layout,
                volatility: r.volatility,
                browser_volatility: r
                    .browser_volatility
                    .iter()
                    .map(|(b, v)| (BrowserId::new(b.clone()), *v))
                    .collect(),
                results: r.results.unwrap_or(raw.depth),
                per_page: r.per_page.unwrap_or(10),
                ads_per_page: r.ads_per_page.unwrap_or(3),
            });
        }
        if engines.is_empty() {
            return Err(loc.bare("at least one [[engines]] entry is required"));
        }
        for (e, spanned) in engines.iter().zip(&raw.engines) {
            for v in std::iter::once(&e.volatility).chain(e.browser_volatility.values()) {
                if !(0.0..=1.0).contains(v) {
                    return Err(loc.at(spanned, format!("engine {}: volatility {v} outside [0, 1]", e.id)));
                }
            }
            if e.results > raw.pool_size {
                return Err(loc.at(
                    spanned,
                    format!("engine {} serves {} results from a pool of {}", e.id, e.results, raw.pool_size),
                ));
            }
        }

        let index: BTreeMap<&EngineId, usize> = engines.iter().enumerate().map(|(i, e)| (&e.id, i)).collect();
        if !(0.0..=1.0).contains(&raw.default_overlap) {
            return Err(loc.bare("default_overlap outside [0, 1]"));
        }
        let n = engines.len();
        let mut overlap = vec![vec![raw.default_overlap; n]; n];
        for (i, row) in overlap.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for o in &raw.overlap {
            let r = o.get_ref();
            let find = |name: &str| {
                index
                    .get(&EngineId::new(name))
                    .copied()
                    .ok_or_else(|| loc.at(o, format!("overlap names unknown engine {name:?}")))
            };
            let (i, j) = (find(&r.a)?, find(&r.b)?);
            if i == j {
                return Err(loc.at(o, "overlap of an engine with itself is always 1"));
            }
            overlap[i][j] = r.value;
            overlap[j][i] = r.value;
        }

        let mut agents: Vec<(AgentConfig, usize)> = Vec::new();
        for a in &raw.agents {
            let r = a.get_ref();
            agents.push((
                AgentConfig {
                    agent: AgentId::new(r.id.clone()),
                    machine: MachineId::new(r.machine.clone()),
                    browser: BrowserId::new(r.browser.clone()),
                    engine: EngineId::new(r.engine.clone()),
                },
                a.span().start,
            ));
        }
        for g in &raw.groups {
            let r = g.get_ref();
            if r.browsers.is_empty() || r.machines == 0 {
                return Err(loc.at(g, "group needs at least one browser and one machine"));
            }
            for m in r.first_machine..r.first_machine + r.machines {
                for b in &r.browsers {
                    agents.push((
                        AgentConfig {
                            agent: AgentId::new(format!("{}-{b}-{m:02}", r.engine)),
                            machine: MachineId::new(format!("{}-m{m:02}", r.engine)),
                            browser: BrowserId::new(b.clone()),
                            engine: EngineId::new(r.engine.clone()),
                        },
                        g.span().start,
                    ));
                }
            }
        }
        agents.sort_by_key(|(_, at)| *at);
        if agents.is_empty() {
            return Err(loc.bare("no agents: add [[agents]] or [[groups]] entries"));
        }
        for (a, at) in &agents {
            if !index.contains_key(&a.engine) {
                return Err(ConfigError {
                    origin: origin.into(),
                    line: Some(loc.line_of(*at)),
                    message: format!("agent {} uses unknown engine {}", a.agent, a.engine),
                });
            }
        }
        let schedule = Schedule {
            cadence_seconds: raw.cadence_seconds,
            min_gap_seconds: raw.gap_seconds,
            max_session_seconds: raw.max_session_seconds,
        };
        let configs: Vec<AgentConfig> = agents.iter().map(|(a, _)| a.clone()).collect();
        let queries: Vec<QueryId> = raw.queries.get_ref().iter().map(|q| QueryId::new(q.clone())).collect();
        if let Err(e) = plan_fleet(&configs, &queries, start, schedule) {
            let line = match &e {
                PlanError::DuplicateSeat { second, .. } | PlanError::DuplicateAgent(second) => agents
                    .iter()
                    .filter(|(a, _)| a.agent == *second)
                    .map(|(_, at)| loc.line_of(*at))
                    .next_back(),
                _ => None,
            };
            return Err(ConfigError {
                origin: origin.into(),
                line,
                message: e.to_string(),
            });
        }

        let mut faults: BTreeMap<AgentId, Vec<InjectedFault>> = BTreeMap::new();
        let mut sorted = configs.clone();
        sorted.sort();
        for f in &raw.faults {
            let r = f.get_ref();
            if let Some(q) = &r.query {
                if !seen_q.contains(q) {
                    return Err(loc.at(f, format!("fault names unknown query {q:?}")));
                }
            }
            let matching: Vec<&AgentConfig> = sorted
                .iter()
                .filter(|a| r.agent.as_deref().is_none_or(|x| a.agent.as_str() == x))
                .filter(|a| r.engine.as_deref().is_none_or(|x| a.engine.as_str() == x))
                .filter(|a| r.browser.as_deref().is_none_or(|x| a.browser.as_str() == x))
                .take(r.count.unwrap_or(usize::MAX))
                .collect();
            if matching.is_empty() {
                return Err(loc.at(f, "fault matches no agent"));
            }
            for a in matching {
                faults.entry(a.agent.clone()).or_default().push(InjectedFault {
                    query: r.query.clone().map(QueryId::new),
                    kind: r.kind,
                });
            }
        }

        raw.analysis
            .metric_settings(raw.depth)
            .map_err(|m| loc.bare(format!("analysis: {m}")))?;

        let cfg = FleetConfig {
            run_id: raw.run_id,
            seed: raw.seed,
            depth: raw.depth,
            schedule,
            start,
            clock: raw.clock,
            jitter_ms: raw.jitter_ms,
            jitter_bound_seconds: raw.jitter_bound_seconds,
            queries,
            pool_size: raw.pool_size,
            domains: raw.domains,
            overlap,
            engines,
            agents: configs,
            faults,
            analysis: raw.analysis,
        };
        cfg.simulator().map_err(|e| match e {
            SimError::Infeasible { triple, detail } => loc.bare(format!(
                "overlaps among {}, {} and {} are infeasible: {detail}",
                triple.0, triple.1, triple.2
            )),
            other => loc.bare(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn plans(&self) -> Vec<AgentPlan> {
        plan_fleet(&self.agents, &self.queries, self.start, self.schedule).expect("validated at parse time")
    }

    pub fn pool_request(&self) -> PoolRequest {
        PoolRequest {
            engines: self.engines.iter().map(|e| e.id.clone()).collect(),
            pool_size: self.pool_size,
            overlap: self.overlap.clone(),
        }
    }

    pub fn simulator(&self) -> Result<Simulator, SimError> {
        let assignment = cross_engine_pools(&self.pool_request())?;
        let by_id: BTreeMap<&EngineId, &EngineConfig> = self.engines.iter().map(|e| (&e.id, e)).collect();
        let specs = specs_from_pools(&assignment, &self.queries, &self.domains, |id| {
            let e = by_id[id];
            let mut s = SimEngineSpec::new(id.clone(), e.layout, self.seed).with_volatility(e.volatility);
            s.browser_volatility = e.browser_volatility.clone();
            s.results = e.results;
            s.per_page = e.per_page;
            s.ads_per_page = e.ads_per_page;
            s
        });
        Simulator::new(specs)
    }

    /// Built-in extractors with each engine bound to its layout's rules.
    pub fn registry(&self) -> ExtractorRegistry {
        let mut reg = ExtractorRegistry::builtin();
        for e in &self.engines {
            reg.bind(e.id.clone(), e.layout.extractor_name())
                .expect("built-in layouts have extractors");
        }
        reg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"run_id = "t"
seed = 1
start = "2020-02-26T08:00:00Z"
queries = ["q1", "q2"]

[[engines]]
id = "alpha"
layout = "classic"

[[engines]]
id = "beta"
layout = "scroll"
volatility = 0.3
browser_volatility = { "browser-b" = 0.6 }

[[overlap]]
a = "alpha"
b = "beta"
value = 0.5

[[groups]]
engine = "alpha"
browsers = ["browser-a", "browser-b"]
machines = 2
"#;

    #[test]
    fn parses_groups_and_overlaps() {
        let cfg = FleetConfig::parse(BASE, "cfg.toml").unwrap();
        assert_eq!(cfg.agents.len(), 4);
        assert_eq!(cfg.agents[1].agent.as_str(), "alpha-browser-b-00");
        assert_eq!(cfg.agents[1].machine.as_str(), "alpha-m00");
        assert_eq!(cfg.overlap[0][1], 0.5);
        assert_eq!(cfg.schedule, Schedule::default());
        assert_eq!(cfg.plans().len(), 4);
        let sim = cfg.simulator().unwrap();
        assert_eq!(sim.engines().count(), 2);
    }

    #[test]
    fn duplicate_seat_points_at_line() {
        let text = format!(
            "{BASE}\n[[agents]]\nid = \"x\"\nmachine = \"alpha-m00\"\nbrowser = \"browser-a\"\nengine = \"alpha\"\n"
        );
        let err = FleetConfig::parse(&text, "cfg.toml").unwrap_err();
        let expected_line = text.lines().position(|l| l == "[[agents]]").unwrap() + 1;
        assert_eq!(err.line, Some(expected_line), "{err}");
        assert!(err.message.contains("already hosts"), "{err}");
    }

    #[test]
    fn syntax_errors_are_located() {
        let text = BASE.replace("volatility = 0.3", "volatility = ");
        let err = FleetConfig::parse(&text, "cfg.toml").unwrap_err();
        let expected_line = text.lines().position(|l| l.starts_with("volatility =")).unwrap() + 1;
        assert_eq!(err.line, Some(expected_line), "{err}");
        assert!(err.to_string().starts_with(&format!("cfg.toml:{expected_line}: ")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("seed = 1", "seed = 1\nsed = 2");
        let err = FleetConfig::parse(&text, "cfg.toml").unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
    }

    #[test]
    fn faults_expand_to_agents() {
        let text = format!("{BASE}\n[[faults]]\nkind = \"bot-detected\"\nengine = \"alpha\"\nquery = \"q2\"\ncount = 3\n");
        let cfg = FleetConfig::parse(&text, "cfg.toml").unwrap();
        assert_eq!(cfg.faults.values().map(Vec::len).sum::<usize>(), 3);
        let bad = format!("{BASE}\n[[faults]]\nkind = \"crash\"\nengine = \"nope\"\n");
        let err = FleetConfig::parse(&bad, "cfg.toml").unwrap_err();
        assert!(err.message.contains("matches no agent"));
    }
}
