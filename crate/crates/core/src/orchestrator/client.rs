//! Engine clients: the interface the session protocol drives, an offline
//! simulator-backed implementation and a scripted one for tests.

use std::sync::Arc;

use chrono::Duration;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::browser::BrowserContext;
use super::clock::Clock;
use super::{AgentConfig, SessionPlan};
use crate::ids::{EngineId, QueryId};
use crate::seed::SeedKey;
use crate::sim::{render, Requester, SimError, SimPage, Simulator};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientFault {
    #[error("client crashed: {0}")]
    Crash(String),
    #[error("client timed out: {0}")]
    Timeout(String),
}

impl From<SimError> for ClientFault {
    fn from(e: SimError) -> Self {
        ClientFault::Crash(e.to_string())
    }
}

/// One browser bound to one engine. Methods mirror the three session steps.
pub trait EngineClient: Send {
    fn engine(&self) -> &EngineId;

    /// Opens the engine's landing page.
    fn landing(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<(), ClientFault>;

    /// Submits the query and returns the first result page.
    fn search(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<String, ClientFault>;

    /// Follows pagination; `None` once the engine has no further page.
    fn next_page(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<Option<String>, ClientFault>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    BotDetected,
    Crash,
    Timeout,
    StickyCookie,
}

/// A fault that fires on a particular query (or every query when `None`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub query: Option<QueryId>,
    pub kind: FaultKind,
}

/// Simulator-backed client. Latencies are drawn from a stream keyed on the
/// agent and session so runs are reproducible under a virtual clock.
pub struct SimClient {
    sim: Arc<Simulator>,
    agent: AgentConfig,
    seed: u64,
    faults: Vec<InjectedFault>,
    pages: Vec<SimPage>,
    next: usize,
    rng: Option<ChaCha8Rng>,
}

impl std::fmt::Debug for SimClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimClient")
            .field("agent", &self.agent.agent)
            .field("engine", &self.agent.engine)
            .finish_non_exhaustive()
    }
}

impl SimClient {
    pub fn new(sim: Arc<Simulator>, agent: AgentConfig, seed: u64) -> Self {
        SimClient {
            sim,
            agent,
            seed,
            faults: Vec::new(),
            pages: Vec::new(),
            next: 0,
            rng: None,
        }
    }

    pub fn with_faults(mut self, faults: Vec<InjectedFault>) -> Self {
        self.faults = faults;
        self
    }

    fn fault(&self, plan: &SessionPlan, kind: FaultKind) -> bool {
        self.faults
            .iter()
            .any(|f| f.kind == kind && f.query.as_ref().is_none_or(|q| *q == plan.query))
    }

    fn latency(&mut self, lo_ms: i64, hi_ms: i64) -> Duration {
        let rng = self.rng.as_mut().expect("landing seeds the latency stream");
        Duration::milliseconds(rng.gen_range(lo_ms..=hi_ms))
    }

    fn host(&self) -> String {
        format!("https://www.{}.test", self.agent.engine)
    }
}

impl EngineClient for SimClient {
    fn engine(&self) -> &EngineId {
        &self.agent.engine
    }

    fn landing(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<(), ClientFault> {
        self.rng = Some(
            SeedKey::new(self.seed)
                .str("latency")
                .str(self.agent.agent.as_str())
                .num(plan.session_index as u64)
                .rng(),
        );
        self.pages.clear();
        self.next = 0;
        let host = self.host();
        ctx.visit(&format!("{host}/"));
        let token = SeedKey::new(self.seed)
            .str(self.agent.agent.as_str())
            .num(plan.session_index as u64)
            .finish();
        ctx.cookies.insert("sid".into(), format!("{token:016x}"));
        ctx.cookies.insert("consent".into(), "pending".into());
        ctx.local_storage.insert("ui.prefs".into(), "default".into());
        ctx.session_storage.insert("tab.id".into(), format!("{}", plan.session_index));
        if self.fault(plan, FaultKind::StickyCookie) {
            ctx.inject_sticky_cookie("track.persist", &format!("{token:016x}"));
        }
        let d = self.latency(800, 3500);
        clock.advance(d);
        Ok(())
    }

    fn search(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<String, ClientFault> {
        let d = self.latency(1500, 6000);
        clock.advance(d);
        if self.fault(plan, FaultKind::Crash) {
            return Err(ClientFault::Crash("renderer out of memory".into()));
        }
        let spec = self.sim.engine(&self.agent.engine)?;
        ctx.visit(&format!("{}/search?q={}", self.host(), plan.query));
        if self.fault(plan, FaultKind::BotDetected) {
            return Ok(render::render_challenge(spec.layout));
        }
        if self.fault(plan, FaultKind::Timeout) {
            clock.advance(Duration::seconds(240));
        }
        self.pages = spec.generate_serp(
            &plan.query,
            Requester {
                agent: &self.agent.agent,
                browser: &self.agent.browser,
                session: plan.session_index,
            },
        )?;
        self.next = 1;
        Ok(self.pages.first().map(|p| p.html.clone()).unwrap_or_default())
    }

    fn next_page(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<Option<String>, ClientFault> {
        let Some(page) = self.pages.get(self.next) else {
            return Ok(None);
        };
        let html = page.html.clone();
        ctx.visit(&format!(
            "{}/search?q={}&page={}",
            self.host(),
            plan.query,
            self.next
        ));
        self.next += 1;
        let d = self.latency(1500, 5000);
        clock.advance(d);
        Ok(Some(html))
    }
}

/// Returns the same canned pages every session.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    engine: EngineId,
    pages: Vec<String>,
    page_latency: Duration,
    fault: Option<ClientFault>,
    next: usize,
}

impl ScriptedClient {
    pub fn new(engine: impl Into<EngineId>, pages: Vec<String>) -> Self {
        ScriptedClient {
            engine: engine.into(),
            pages,
            page_latency: Duration::seconds(2),
            fault: None,
            next: 0,
        }
    }

    pub fn with_page_latency(mut self, d: Duration) -> Self {
        self.page_latency = d;
        self
    }

    /// Fails the search step with `fault`.
    pub fn failing(mut self, fault: ClientFault) -> Self {
        self.fault = Some(fault);
        self
    }
}

impl EngineClient for ScriptedClient {
    fn engine(&self) -> &EngineId {
        &self.engine
    }

    fn landing(
        &mut self,
        plan: &SessionPlan,
        ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<(), ClientFault> {
        self.next = 0;
        ctx.visit("https://scripted.test/");
        ctx.cookies
            .insert("sid".into(), format!("{}-{}", plan.agent, plan.session_index));
        clock.advance(self.page_latency);
        Ok(())
    }

    fn search(
        &mut self,
        _plan: &SessionPlan,
        _ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<String, ClientFault> {
        clock.advance(self.page_latency);
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        self.next = 1;
        Ok(self.pages.first().cloned().unwrap_or_default())
    }

    fn next_page(
        &mut self,
        _plan: &SessionPlan,
        _ctx: &mut BrowserContext,
        clock: &mut dyn Clock,
    ) -> Result<Option<String>, ClientFault> {
        let page = self.pages.get(self.next).cloned();
        if page.is_some() {
            self.next += 1;
            clock.advance(self.page_latency);
        }
        Ok(page)
    }
}
