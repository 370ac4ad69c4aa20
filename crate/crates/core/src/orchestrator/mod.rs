//! Synchronised session planning and execution across an agent fleet.
//!
//! Every agent runs session `i` at the same scheduled instant; consecutive
//! sessions start `cadence_seconds` apart. A session visits the landing page,
//! submits the query and walks result pages until `depth` organic results are
//! collected or pages run out. Afterwards the browser state is cleared; an
//! agent whose state cannot be cleared sits out its next session.
//!
//! Sessions that hit bot detection, a client crash or their deadline are
//! recorded as failures and never retried, so the fleet stays in lockstep.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::ids::{AgentId, BrowserId, EngineId, MachineId, QueryId};
use crate::metrics::{ListOrigin, RankedList, DEFAULT_DEPTH};
use crate::serp::{assemble_ranked_list, parse_with, Extractor, ExtractorRegistry, ParseWarning, SerpCapture, SerpError};

pub mod browser;
pub mod client;
pub mod clock;
#[cfg(feature = "live")]
pub mod live;
pub mod report;

pub use browser::{clean_state, BrowserContext, CleanConfirmation, HygieneError, StateClass};
pub use client::{ClientFault, EngineClient, FaultKind, InjectedFault, ScriptedClient, SimClient};
pub use clock::{Clock, VirtualClock, WallClock};
pub use report::{fleet_report, CompletionTable};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent: AgentId,
    pub machine: MachineId,
    pub browser: BrowserId,
    pub engine: EngineId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub cadence_seconds: u32,
    pub min_gap_seconds: u32,
    /// Sessions must finish strictly within this budget.
    pub max_session_seconds: u32,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            cadence_seconds: 420,
            min_gap_seconds: 240,
            max_session_seconds: 180,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub agent: AgentId,
    pub session_index: usize,
    pub query: QueryId,
    pub scheduled_start: DateTime<Utc>,
    pub cadence_seconds: u32,
    pub min_gap_seconds: u32,
}

impl SessionPlan {
    /// Latest instant the session may end and still leave `min_gap_seconds`
    /// before the next scheduled start.
    pub fn latest_end(&self) -> DateTime<Utc> {
        self.scheduled_start + Duration::seconds(i64::from(self.cadence_seconds))
            - Duration::seconds(i64::from(self.min_gap_seconds))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPlan {
    pub agent: AgentConfig,
    pub sessions: Vec<SessionPlan>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("fleet needs at least one agent and one query")]
    Empty,
    #[error("machine {machine} already hosts a {browser} agent ({first} and {second})")]
    DuplicateSeat {
        machine: MachineId,
        browser: BrowserId,
        first: AgentId,
        second: AgentId,
    },
    #[error("agent id {0} used twice")]
    DuplicateAgent(AgentId),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// Assigns every agent the same start instants: session `i` runs query `i`
/// at `t0 + i * cadence`.
pub fn plan_fleet(
    configs: &[AgentConfig],
    queries: &[QueryId],
    t0: DateTime<Utc>,
    schedule: Schedule,
) -> Result<Vec<AgentPlan>, PlanError> {
    if configs.is_empty() || queries.is_empty() {
        return Err(PlanError::Empty);
    }
    if schedule.cadence_seconds == 0 || schedule.min_gap_seconds == 0 {
        return Err(PlanError::Schedule("cadence and gap must be positive".into()));
    }
    if schedule.max_session_seconds + schedule.min_gap_seconds > schedule.cadence_seconds {
        return Err(PlanError::Schedule(format!(
            "a {} s session plus a {} s gap does not fit a {} s cadence",
            schedule.max_session_seconds, schedule.min_gap_seconds, schedule.cadence_seconds
        )));
    }
    let mut seats = std::collections::BTreeMap::new();
    let mut ids = std::collections::BTreeSet::new();
    for c in configs {
        if !ids.insert(&c.agent) {
            return Err(PlanError::DuplicateAgent(c.agent.clone()));
        }
        if let Some(first) = seats.insert((&c.machine, &c.browser), &c.agent) {
            return Err(PlanError::DuplicateSeat {
                machine: c.machine.clone(),
                browser: c.browser.clone(),
                first: first.clone(),
                second: c.agent.clone(),
            });
        }
    }
    Ok(configs
        .iter()
        .map(|c| AgentPlan {
            agent: c.clone(),
            sessions: queries
                .iter()
                .enumerate()
                .map(|(i, q)| SessionPlan {
                    agent: c.agent.clone(),
                    session_index: i,
                    query: q.clone(),
                    scheduled_start: t0
                        + Duration::seconds(i as i64 * i64::from(schedule.cadence_seconds)),
                    cadence_seconds: schedule.cadence_seconds,
                    min_gap_seconds: schedule.min_gap_seconds,
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Landing,
    Query,
    Navigate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Failure {
    BotDetected,
    Crash,
    Timeout,
    /// Skipped because the previous session left browser state behind.
    Quarantined,
}

impl Failure {
    pub const ALL: [Failure; 4] = [
        Failure::BotDetected,
        Failure::Crash,
        Failure::Timeout,
        Failure::Quarantined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Failure::BotDetected => "bot-detected",
            Failure::Crash => "crash",
            Failure::Timeout => "timeout",
            Failure::Quarantined => "quarantined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CleanOutcome {
    Cleaned { cleared: Vec<StateClass> },
    Dirty { remaining: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub agent: AgentConfig,
    pub plan: SessionPlan,
    pub actual_start: DateTime<Utc>,
    pub actual_end: DateTime<Utc>,
    pub steps: Vec<Step>,
    pub captures: Vec<SerpCapture>,
    /// Present exactly when `failure` is absent.
    pub ranked_list: Option<RankedList>,
    pub failure: Option<Failure>,
    pub detail: Option<String>,
    pub warnings: Vec<ParseWarning>,
    /// Browser state keys seen when the session began.
    pub state_at_start: Vec<String>,
    /// Browser state keys present before cleaning.
    pub state_at_end: Vec<String>,
    pub cleaning: Option<CleanOutcome>,
}

impl SessionRecord {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }

    pub fn duration(&self) -> Duration {
        self.actual_end - self.actual_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    pub depth: usize,
    pub max_session_seconds: u32,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            depth: DEFAULT_DEPTH,
            max_session_seconds: 180,
        }
    }
}

/// Runs one session's three steps. Never fails: client faults, bot
/// detection and deadline overruns are folded into the record.
pub fn run_session(
    agent: &AgentConfig,
    plan: &SessionPlan,
    client: &mut dyn EngineClient,
    ctx: &mut BrowserContext,
    clock: &mut dyn Clock,
    extractor: &Extractor,
    opts: SessionOptions,
) -> SessionRecord {
    let start = clock.now();
    let deadline = (start + Duration::seconds(i64::from(opts.max_session_seconds))).min(plan.latest_end() + Duration::milliseconds(1));
    let mut rec = SessionRecord {
        agent: agent.clone(),
        plan: plan.clone(),
        actual_start: start,
        actual_end: start,
        steps: Vec::new(),
        captures: Vec::new(),
        ranked_list: None,
        failure: None,
        detail: None,
        warnings: Vec::new(),
        state_at_start: ctx.keys().into_iter().collect(),
        state_at_end: Vec::new(),
        cleaning: None,
    };

    let outcome = drive(agent, plan, client, ctx, clock, extractor, opts, deadline, &mut rec);
    rec.actual_end = clock.now();
    if let Err((failure, detail)) = outcome {
        rec.failure = Some(failure);
        rec.detail = Some(detail);
        rec.ranked_list = None;
    }
    rec.state_at_end = ctx.keys().into_iter().collect();
    rec
}

type StepResult = Result<(), (Failure, String)>;

fn fault(f: ClientFault) -> (Failure, String) {
    match f {
        ClientFault::Crash(m) => (Failure::Crash, m),
        ClientFault::Timeout(m) => (Failure::Timeout, m),
    }
}

#[allow(clippy::too_many_arguments)]
fn drive(
    agent: &AgentConfig,
    plan: &SessionPlan,
    client: &mut dyn EngineClient,
    ctx: &mut BrowserContext,
    clock: &mut dyn Clock,
    extractor: &Extractor,
    opts: SessionOptions,
    deadline: DateTime<Utc>,
    rec: &mut SessionRecord,
) -> StepResult {
    let check = |clock: &dyn Clock, step: &str| -> StepResult {
        if clock.now() >= deadline {
            Err((Failure::Timeout, format!("deadline passed during {step}")))
        } else {
            Ok(())
        }
    };

    client.landing(plan, ctx, clock).map_err(fault)?;
    check(clock, "landing")?;
    rec.steps.push(Step::Landing);

    let first = client.search(plan, ctx, clock).map_err(fault)?;
    check(clock, "query")?;
    rec.steps.push(Step::Query);

    let mut pages = Vec::new();
    let mut html = first;
    let mut found = std::collections::HashSet::new();
    loop {
        if extractor.is_challenge(&html) {
            return Err((Failure::BotDetected, "challenge page served".into()));
        }
        let page_index = pages.len();
        rec.captures.push(SerpCapture {
            html: html.clone(),
            engine: agent.engine.clone(),
            query: plan.query.clone(),
            agent: agent.agent.clone(),
            page_index,
            captured_at: clock.now(),
        });
        let parsed = parse_with(extractor, &html, page_index);
        rec.warnings.extend(parsed.warnings.iter().cloned());
        found.extend(parsed.entries.iter().map(|e| e.url.clone()));
        pages.push(parsed);
        if found.len() >= opts.depth || extractor.is_scroll() {
            break;
        }
        match client.next_page(plan, ctx, clock).map_err(fault)? {
            Some(next) => {
                check(clock, "navigation")?;
                if rec.steps.last() != Some(&Step::Navigate) {
                    rec.steps.push(Step::Navigate);
                }
                html = next;
            }
            None => break,
        }
    }
    if rec.steps.last() != Some(&Step::Navigate) {
        rec.steps.push(Step::Navigate);
    }
    check(clock, "navigation")?;

    let assembled = assemble_ranked_list(&pages, opts.depth)
        .map_err(|e: SerpError| (Failure::Crash, e.to_string()))?;
    rec.ranked_list = Some(assembled.ranked_list().with_origin(ListOrigin {
        agent: agent.agent.clone(),
        engine: agent.engine.clone(),
        browser: agent.browser.clone(),
        query: plan.query.clone(),
        session_index: plan.session_index,
    }));
    Ok(())
}

/// Builds the per-agent client, clock and browser for a fleet run.
pub trait AgentFactory: Sync {
    fn client(&self, agent: &AgentConfig) -> Box<dyn EngineClient>;
    fn clock(&self, agent: &AgentConfig) -> Box<dyn Clock>;
    fn context(&self, _agent: &AgentConfig) -> BrowserContext {
        BrowserContext::default()
    }
}

struct Worker {
    plan: AgentPlan,
    client: Box<dyn EngineClient>,
    clock: Box<dyn Clock>,
    ctx: BrowserContext,
    extractor: std::sync::Arc<Extractor>,
    quarantined: bool,
}

impl Worker {
    fn session(&mut self, index: usize, opts: SessionOptions) -> SessionRecord {
        let plan = self.plan.sessions[index].clone();
        self.clock.sleep_until(plan.scheduled_start);
        if self.quarantined {
            let now = self.clock.now();
            let cleaning = match clean_state(&mut self.ctx) {
                Ok(c) => {
                    self.quarantined = false;
                    CleanOutcome::Cleaned { cleared: c.cleared }
                }
                Err(e) => CleanOutcome::Dirty { remaining: e.remaining },
            };
            return SessionRecord {
                agent: self.plan.agent.clone(),
                plan,
                actual_start: now,
                actual_end: now,
                steps: vec![],
                captures: vec![],
                ranked_list: None,
                failure: Some(Failure::Quarantined),
                detail: Some("previous session left browser state behind".into()),
                warnings: vec![],
                state_at_start: self.ctx.keys().into_iter().collect(),
                state_at_end: self.ctx.keys().into_iter().collect(),
                cleaning: Some(cleaning),
            };
        }
        let mut rec = run_session(
            &self.plan.agent,
            &plan,
            self.client.as_mut(),
            &mut self.ctx,
            self.clock.as_mut(),
            &self.extractor,
            opts,
        );
        rec.cleaning = Some(match clean_state(&mut self.ctx) {
            Ok(c) => CleanOutcome::Cleaned { cleared: c.cleared },
            Err(e) => {
                self.quarantined = true;
                CleanOutcome::Dirty { remaining: e.remaining }
            }
        });
        rec
    }
}

#[derive(Debug, Error)]
pub enum FleetError {
    #[error(transparent)]
    Extractor(#[from] SerpError),
    #[error("record sink failed: {0}")]
    Sink(String),
}

/// Executes all plans in lockstep. Session index `i` starts only after every
/// agent finished `i - 1`; within an index agents run concurrently under
/// [`Execution::Parallel`] (one thread each, so wall-clock sleeps overlap).
/// `sink` sees every record in (session index, agent) order.
pub fn run_fleet(
    plans: Vec<AgentPlan>,
    factory: &dyn AgentFactory,
    registry: &ExtractorRegistry,
    opts: SessionOptions,
    execution: Execution,
    sink: &mut dyn FnMut(&SessionRecord) -> Result<(), String>,
) -> Result<Vec<SessionRecord>, FleetError> {
    let mut workers = plans
        .into_iter()
        .map(|plan| {
            Ok(Worker {
                client: factory.client(&plan.agent),
                clock: factory.clock(&plan.agent),
                ctx: factory.context(&plan.agent),
                extractor: registry.for_engine(&plan.agent.engine)?,
                quarantined: false,
                plan,
            })
        })
        .collect::<Result<Vec<_>, SerpError>>()?;
    let sessions = workers.iter().map(|w| w.plan.sessions.len()).max().unwrap_or(0);

    let mut all = Vec::new();
    for index in 0..sessions {
        let batch: Vec<Option<SessionRecord>> = match execution {
            Execution::Parallel if workers.len() > 1 => std::thread::scope(|s| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .map(|w| {
                        s.spawn(move || (index < w.plan.sessions.len()).then(|| w.session(index, opts)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("agent worker panicked"))
                    .collect()
            }),
            _ => workers
                .iter_mut()
                .map(|w| (index < w.plan.sessions.len()).then(|| w.session(index, opts)))
                .collect(),
        };
        for rec in batch.into_iter().flatten() {
            sink(&rec).map_err(FleetError::Sink)?;
            all.push(rec);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2020-02-26T08:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    pub(crate) fn agents(n: usize) -> Vec<AgentConfig> {
        (0..n)
            .map(|i| AgentConfig {
                agent: AgentId::new(format!("agent-{i:03}")),
                machine: MachineId::new(format!("m{}", i / 2)),
                browser: BrowserId::new(if i % 2 == 0 { "browser-a" } else { "browser-b" }),
                engine: EngineId::new("classic"),
            })
            .collect()
    }

    fn queries(n: usize) -> Vec<QueryId> {
        (0..n).map(|i| QueryId::new(format!("q{i}"))).collect()
    }

    #[test]
    fn four_agents_two_queries() {
        let plans = plan_fleet(&agents(4), &queries(2), t0(), Schedule::default()).unwrap();
        for p in &plans {
            let starts: Vec<_> = p.sessions.iter().map(|s| s.scheduled_start).collect();
            assert_eq!(starts, vec![t0(), t0() + Duration::seconds(420)]);
            assert_eq!(p.sessions[1].query, QueryId::new("q1"));
        }
    }

    #[test]
    fn single_agent_single_query() {
        let plans = plan_fleet(&agents(1), &queries(1), t0(), Schedule::default()).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].sessions.len(), 1);
        assert_eq!(plans[0].sessions[0].scheduled_start, t0());
    }

    #[test]
    fn two_hundred_agents_four_queries() {
        let plans = plan_fleet(&agents(200), &queries(4), t0(), Schedule::default()).unwrap();
        let all: Vec<_> = plans.iter().flat_map(|p| &p.sessions).collect();
        assert_eq!(all.len(), 200 * 4);
        let distinct: std::collections::BTreeSet<_> = all.iter().map(|s| s.scheduled_start).collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn duplicate_seat_rejected() {
        let mut cfg = agents(3);
        cfg[2].machine = cfg[0].machine.clone();
        cfg[2].browser = cfg[0].browser.clone();
        assert!(matches!(
            plan_fleet(&cfg, &queries(1), t0(), Schedule::default()),
            Err(PlanError::DuplicateSeat { .. })
        ));
        assert_eq!(
            plan_fleet(&[], &queries(1), t0(), Schedule::default()),
            Err(PlanError::Empty)
        );
    }

    #[test]
    fn schedule_must_fit_gap() {
        let s = Schedule {
            cadence_seconds: 300,
            ..Schedule::default()
        };
        assert!(matches!(
            plan_fleet(&agents(1), &queries(1), t0(), s),
            Err(PlanError::Schedule(_))
        ));
    }
}
