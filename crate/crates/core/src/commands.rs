//! Entry points behind the `run`, `analyze` and `replay` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, Utc};
use thiserror::Error;

use crate::classify::{composition_profile, write_profiles_csv, CompositionProfile, Ruleset};
use crate::compare::{
    all_matrices, heatmap_json, pairwise_compare, threshold_census, write_matrices_csv, AgentRanking, BrowserScope,
    Metric,
    SimilarityMatrix, SimilarityRecord,
};
use crate::config::{ClockKind, ConfigError, FleetConfig};
use crate::exec::Execution;
use crate::ids::{AgentId, EngineId, QueryId};
use crate::orchestrator::{
    fleet_report, plan_fleet, run_fleet, AgentConfig, AgentFactory, Clock, CompletionTable, EngineClient,
    InjectedFault, SessionOptions, SimClient, VirtualClock, WallClock,
};
use crate::seed::SeedKey;
use crate::serp::corpus::{replay_corpus, ReplayReport};
use crate::sim::Simulator;
use crate::stats::{browser_tests, effect_summary, format_p, summary_csv, EffectTest};
use crate::store::{
    self, read_sessions, sha256_hex, timestamp, RunCounts, RunManifest, RunWriter, StoreError, StoredSession,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing session log: {0}")]
    MissingSessions(PathBuf),
    #[error(transparent)]
    Store(StoreError),
    #[error("{0}")]
    Other(String),
}

impl From<StoreError> for CommandError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::MissingSessions(p) => CommandError::MissingSessions(p),
            other => CommandError::Store(other),
        }
    }
}

impl CommandError {
    /// 2 for config problems, 3 for a missing session log, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::MissingSessions(_) => 3,
            _ => 1,
        }
    }
}

fn other(context: &str) -> impl Fn(std::io::Error) -> CommandError + '_ {
    move |e| CommandError::Other(format!("{context}: {e}"))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub cadence_seconds: Option<u32>,
    pub gap_seconds: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub counts: RunCounts,
    pub completion: CompletionTable,
}

struct SimFactory {
    sim: Arc<Simulator>,
    seed: u64,
    faults: BTreeMap<AgentId, Vec<InjectedFault>>,
    clock: ClockKind,
    start: chrono::DateTime<Utc>,
    jitter_ms: u64,
}

impl AgentFactory for SimFactory {
    fn client(&self, agent: &AgentConfig) -> Box<dyn EngineClient> {
        let faults = self.faults.get(&agent.agent).cloned().unwrap_or_default();
        Box::new(SimClient::new(self.sim.clone(), agent.clone(), self.seed).with_faults(faults))
    }

    fn clock(&self, agent: &AgentConfig) -> Box<dyn Clock> {
        match self.clock {
            ClockKind::Virtual => Box::new(VirtualClock::new(self.start).with_jitter(
                Duration::milliseconds(self.jitter_ms as i64),
                SeedKey::new(self.seed).str("clock").str(agent.agent.as_str()),
            )),
            ClockKind::Wall => Box::new(WallClock),
        }
    }
}

fn apply_overrides(cfg: &mut FleetConfig, o: &RunOverrides) -> Result<(), ConfigError> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = o.depth {
        if d == 0 {
            return Err(bare("--depth must be at least 1"));
        }
        for e in cfg.engines.iter_mut().filter(|e| e.results == cfg.depth) {
            e.results = d;
        }
        cfg.depth = d;
        if let Some(e) = cfg.engines.iter().find(|e| e.results > cfg.pool_size) {
            return Err(bare(format!(
                "--depth {d}: engine {} would serve more results than its pool of {}",
                e.id, cfg.pool_size
            )));
        }
    }
    if let Some(c) = o.cadence_seconds {
        cfg.schedule.cadence_seconds = c;
    }
    if let Some(g) = o.gap_seconds {
        cfg.schedule.min_gap_seconds = g;
    }
    plan_fleet(&cfg.agents, &cfg.queries, cfg.start, cfg.schedule).map_err(|e| bare(e.to_string()))?;
    Ok(())
}

fn bare(message: impl Into<String>) -> ConfigError {
    ConfigError {
        origin: "command line".into(),
        line: None,
        message: message.into(),
    }
}

/// Runs the configured fleet against the simulator and writes a run
/// directory at `out`.
pub fn cmd_run(
    config_path: &Path,
    out: &Path,
    overrides: &RunOverrides,
    execution: Execution,
) -> Result<RunSummary, CommandError> {
    let text = fs::read_to_string(config_path).map_err(|e| ConfigError {
        origin: config_path.display().to_string(),
        line: None,
        message: e.to_string(),
    })?;
    let mut cfg = FleetConfig::parse(&text, &config_path.display().to_string())?;
    apply_overrides(&mut cfg, overrides)?;
    let sim = cfg.simulator().map_err(|e| bare(e.to_string()))?;
    let registry = cfg.registry();
    let factory = SimFactory {
        sim: Arc::new(sim),
        seed: cfg.seed,
        faults: cfg.faults.clone(),
        clock: cfg.clock,
        start: cfg.start,
        jitter_ms: cfg.jitter_ms,
    };
    let started = Utc::now();
    let mut writer = RunWriter::create(out, &text)?;
    let mut sink_err = None;
    let records = run_fleet(
        cfg.plans(),
        &factory,
        &registry,
        SessionOptions {
            depth: cfg.depth,
            max_session_seconds: cfg.schedule.max_session_seconds,
        },
        execution,
        &mut |rec| {
            writer.append(rec).map_err(|e| {
                let msg = e.to_string();
                sink_err = Some(e);
                msg
            })
        },
    );
    if let Some(e) = sink_err {
        return Err(e.into());
    }
    let records = records.map_err(|e| CommandError::Other(e.to_string()))?;
    let completion = fleet_report(&records);
    let report_path = out.join("completion.txt");
    fs::write(&report_path, completion.render()).map_err(other("completion.txt"))?;

    let stored = read_sessions(out)?;
    let counts = RunCounts::from_sessions(&stored);
    let mut m = RunManifest::default();
    m.push("run_id", &cfg.run_id);
    m.push("schema", store::SCHEMA_VERSION);
    m.push("serp_audit_version", env!("CARGO_PKG_VERSION"));
    m.push("config_sha256", sha256_hex(text.as_bytes()));
    m.push("seed", cfg.seed);
    m.push("depth", cfg.depth);
    m.push("cadence_seconds", cfg.schedule.cadence_seconds);
    m.push("gap_seconds", cfg.schedule.min_gap_seconds);
    m.push("clock", format!("{:?}", cfg.clock).to_lowercase());
    let mut extractors: Vec<String> = cfg
        .engines
        .iter()
        .map(|e| {
            let x = registry.for_engine(&e.id).expect("bound at config time");
            format!("{}={}@{}", e.id, x.name(), x.version())
        })
        .collect();
    extractors.sort();
    m.push("extractors", extractors.join(","));
    m.push("queries", cfg.queries.len());
    if let (Some(first), Some(last)) = (stored.first(), stored.last()) {
        m.push("schedule_start_utc", timestamp(first.scheduled_start));
        m.push("schedule_end_utc", timestamp(last.actual_end));
    }
    m.push("started_utc", timestamp(started));
    m.push("finished_utc", timestamp(Utc::now()));
    m.set_counts(counts);
    let dir = writer.finish(&m)?;
    Ok(RunSummary {
        dir,
        counts,
        completion,
    })
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub metric: Option<Metric>,
    pub query: Option<QueryId>,
    pub topk: Option<usize>,
    pub rbo_p: Option<[f64; 2]>,
    pub permutations: Option<usize>,
    pub ruleset: Option<PathBuf>,
    /// Defaults to `<run>/analysis`.
    pub out: Option<PathBuf>,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub out: PathBuf,
    pub records: usize,
    pub matrices: usize,
    pub tests: usize,
    pub significant: usize,
    pub files: Vec<PathBuf>,
}

pub const ANALYSIS_FILES: [&str; 8] = [
    "similarity_records.csv",
    "matrices.csv",
    "heatmaps.json",
    "census.csv",
    "profiles.csv",
    "effect_tests.csv",
    "significance.csv",
    "completion.txt",
];

/// Compares, aggregates, classifies and tests a finished run. Outputs depend
/// only on the run directory and the options, so re-running rewrites them
/// byte for byte.
pub fn cmd_analyze(run: &Path, opts: &AnalyzeOptions) -> Result<AnalyzeSummary, CommandError> {
    let sessions = read_sessions(run)?;
    let cfg_path = run.join(store::CONFIG_FILE);
    let cfg = match fs::read_to_string(&cfg_path) {
        Ok(text) => Some(FleetConfig::parse(&text, &cfg_path.display().to_string())?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(other("config.toml")(e)),
    };
    let mut analysis = cfg.as_ref().map(|c| c.analysis.clone()).unwrap_or_default();
    let depth = cfg.as_ref().map_or(crate::metrics::DEFAULT_DEPTH, |c| c.depth);
    let seed = cfg.as_ref().map_or(0, |c| c.seed);
    if let Some(k) = opts.topk {
        analysis.topk = k;
    }
    if let Some(p) = opts.rbo_p {
        analysis.rbo_p = p;
    }
    if let Some(n) = opts.permutations {
        analysis.permutations = n;
    }
    let settings = analysis.metric_settings(depth).map_err(bare)?;
    let ruleset = match &opts.ruleset {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(other("ruleset"))?;
            Ruleset::parse(&text).map_err(|e| CommandError::Other(format!("{}: {e}", p.display())))?
        }
        None => Ruleset::builtin(),
    };
    let metric_ok = |m: Metric| opts.metric.is_none_or(|x| x == m);

    let mut records: Vec<SimilarityRecord> = Vec::new();
    let mut matrices: Vec<SimilarityMatrix> = Vec::new();
    let mut profiles: Vec<CompositionProfile> = Vec::new();
    let mut tests: Vec<EffectTest> = Vec::new();
    let mut census_rows = String::from("query,threshold,below,total,fraction\n");
    let mut census_all = (0, 0);

    for (query, group) in store::by_query(&sessions).into_values() {
        if opts.query.as_ref().is_some_and(|q| *q != query) {
            continue;
        }
        let rankings: Vec<AgentRanking> = group
            .iter()
            .filter_map(|s: &&StoredSession| {
                Some(AgentRanking {
                    agent: s.agent.clone(),
                    query: s.query.clone(),
                    list: s.ranked().filter(|l| !l.is_empty())?,
                })
            })
            .collect();

        let mut by_engine: BTreeMap<&EngineId, Vec<&crate::metrics::RankedList>> = BTreeMap::new();
        for r in &rankings {
            by_engine.entry(&r.agent.engine).or_default().push(&r.list);
        }
        for (engine, lists) in by_engine {
            profiles.push(
                composition_profile(engine, &query, &lists, &ruleset, analysis.profile_k)
                    .map_err(|e| CommandError::Other(e.to_string()))?,
            );
        }

        if rankings.len() < 2 {
            continue;
        }
        let recs = pairwise_compare(&rankings, &settings, opts.execution)
            .map_err(|e| CommandError::Other(e.to_string()))?;
        let ms: Vec<SimilarityMatrix> = all_matrices(&recs)
            .map_err(|e| CommandError::Other(e.to_string()))?
            .into_iter()
            .filter(|m| metric_ok(m.metric))
            .collect();
        let c = threshold_census(
            ms.iter().filter(|m| m.scope != BrowserScope::Cross),
            analysis.census_threshold,
        );
        census_all.0 += c.below;
        census_all.1 += c.total;
        census_rows.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(query.as_str()),
            analysis.census_threshold,
            c.below,
            c.total,
            c.fraction()
        ));
        tests.extend(
            browser_tests(&recs, analysis.permutations, seed, opts.execution)
                .into_iter()
                .filter(|t| metric_ok(t.response)),
        );
        matrices.extend(ms);
        records.extend(recs);
    }
    let all_fraction = if census_all.1 == 0 { 0.0 } else { census_all.0 as f64 / census_all.1 as f64 };
    census_rows.push_str(&format!(
        "*,{},{},{},{}\n",
        analysis.census_threshold, census_all.0, census_all.1, all_fraction
    ));

    let out = opts.out.clone().unwrap_or_else(|| run.join("analysis"));
    fs::create_dir_all(&out).map_err(other("analysis directory"))?;
    let path = |name: &str| out.join(name);
    let fail = |e: csv::Error| CommandError::Other(e.to_string());

    let mut w = csv::Writer::from_path(path(ANALYSIS_FILES[0])).map_err(fail)?;
    for r in &records {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(other(ANALYSIS_FILES[0]))?;

    let f = fs::File::create(path(ANALYSIS_FILES[1])).map_err(other(ANALYSIS_FILES[1]))?;
    write_matrices_csv(&matrices, f).map_err(|e| CommandError::Other(e.to_string()))?;

    let json = serde_json::to_string_pretty(&heatmap_json(&matrices)).expect("json");
    fs::write(path(ANALYSIS_FILES[2]), json + "\n").map_err(other(ANALYSIS_FILES[2]))?;
    fs::write(path(ANALYSIS_FILES[3]), census_rows).map_err(other(ANALYSIS_FILES[3]))?;

    let f = fs::File::create(path(ANALYSIS_FILES[4])).map_err(other(ANALYSIS_FILES[4]))?;
    write_profiles_csv(&profiles, f).map_err(|e| CommandError::Other(e.to_string()))?;

    let mut t = String::from("query,engine,effect,group_a,group_b,response,statistic,p_value,p,permutations,n_a,n_b,grouping\n");
    for x in &tests {
        let (a, b) = match &x.effect {
            crate::stats::Effect::Browser { a, b } => (a.to_string(), b.to_string()),
            crate::stats::Effect::EnginePair { a, b } => (a.to_string(), b.to_string()),
            crate::stats::Effect::Query { a, b } => (a.to_string(), b.to_string()),
        };
        t.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(x.scope.query.as_ref().map_or("", |q| q.as_str())),
            csv_field(x.scope.engine.as_ref().map_or("", |e| e.as_str())),
            x.effect.kind(),
            csv_field(&a),
            csv_field(&b),
            x.response,
            x.statistic,
            x.p_value,
            format_p(x.p_value),
            x.permutations,
            x.n_a,
            x.n_b,
            x.grouping
        ));
    }
    fs::write(path(ANALYSIS_FILES[5]), t).map_err(other(ANALYSIS_FILES[5]))?;
    let summary = effect_summary(&tests);
    let significant = summary.iter().flat_map(|r| r.cells).flatten().count();
    fs::write(path(ANALYSIS_FILES[6]), summary_csv(&summary)).map_err(other(ANALYSIS_FILES[6]))?;

    let completion = completion_from_sessions(&sessions);
    fs::write(path(ANALYSIS_FILES[7]), completion.render()).map_err(other(ANALYSIS_FILES[7]))?;

    Ok(AnalyzeSummary {
        files: ANALYSIS_FILES.iter().map(|f| path(f)).collect(),
        out,
        records: records.len(),
        matrices: matrices.len(),
        tests: tests.len(),
        significant,
    })
}

fn completion_from_sessions(sessions: &[StoredSession]) -> CompletionTable {
    let mut t = CompletionTable::default();
    for s in sessions {
        t.tally(&s.query, &s.agent.engine, &s.agent.browser, s.failure);
    }
    t
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub report: ReplayReport,
    pub text: String,
}

impl ReplayOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.report.is_clean())
    }
}

/// Re-parses every fixture in `corpus` against its sidecar.
pub fn cmd_replay(corpus: &Path) -> Result<ReplayOutcome, CommandError> {
    let report = replay_corpus(corpus).map_err(|e| CommandError::Other(e.to_string()))?;
    let text = report.render(corpus);
    Ok(ReplayOutcome { report, text })
}
