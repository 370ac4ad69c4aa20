use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serp_audit::orchestrator::{
    plan_fleet, run_fleet, run_session, AgentConfig, AgentFactory, BrowserContext, CleanOutcome, Clock, ClientFault,
    EngineClient, Failure, FaultKind, InjectedFault, Schedule, ScriptedClient, SessionOptions, SessionPlan,
    SimClient, Step, VirtualClock,
};
use serp_audit::seed::SeedKey;
use serp_audit::serp::ExtractorRegistry;
use serp_audit::sim::{Layout, SimEngineSpec, Simulator};
use serp_audit::{AgentId, BrowserId, EngineId, Execution, MachineId, QueryId};

fn t0() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2020-02-26T08:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

fn pool(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("https://outlet{}.example/story/{i}", i % 13)).collect()
}

fn simulator(v: f64) -> Arc<Simulator> {
    let specs = [("classic", Layout::Classic), ("sidebar", Layout::Sidebar), ("scroll", Layout::Scroll)]
        .into_iter()
        .map(|(id, layout)| {
            SimEngineSpec::new(id, layout, 11)
                .with_ranking("q0", pool(120))
                .with_ranking("q1", pool(120))
                .with_ranking("q2", pool(120))
                .with_volatility(v)
        })
        .collect();
    Arc::new(Simulator::new(specs).unwrap())
}

fn agent(id: &str, engine: &str) -> AgentConfig {
    AgentConfig {
        agent: AgentId::new(id),
        machine: MachineId::new(format!("{id}-host")),
        browser: BrowserId::new("chrome"),
        engine: EngineId::new(engine),
    }
}

fn plan(agent: &AgentConfig, index: usize) -> SessionPlan {
    SessionPlan {
        agent: agent.agent.clone(),
        session_index: index,
        query: QueryId::new(format!("q{index}")),
        scheduled_start: t0() + Duration::seconds(420 * index as i64),
        cadence_seconds: 420,
        min_gap_seconds: 240,
    }
}

fn session(a: &AgentConfig, client: &mut dyn EngineClient) -> serp_audit::orchestrator::SessionRecord {
    let reg = ExtractorRegistry::builtin();
    let ex = reg.for_engine(&a.engine).unwrap();
    let mut ctx = BrowserContext::default();
    let mut clock = VirtualClock::new(t0());
    run_session(a, &plan(a, 0), client, &mut ctx, &mut clock, &ex, SessionOptions::default())
}

#[test]
fn zero_volatility_sessions_return_fifty() {
    let sim = simulator(0.0);
    for engine in ["classic", "sidebar", "scroll"] {
        let a = agent("a1", engine);
        let mut client = SimClient::new(sim.clone(), a.clone(), 3);
        let rec = session(&a, &mut client);
        assert!(rec.is_success(), "{engine}: {:?}", rec.detail);
        assert_eq!(rec.ranked_list.as_ref().unwrap().items(), &pool(120)[..50], "{engine}");
        assert_eq!(rec.steps, vec![Step::Landing, Step::Query, Step::Navigate]);
        let pages = if engine == "scroll" { 1 } else { 5 };
        assert_eq!(rec.captures.len(), pages, "{engine}");
        assert!(rec.duration() < Duration::seconds(180));
    }
}

const CLASSIC_CAPTCHA: &str = r#"<html><body>
<div id="infoDiv">Our systems have detected unusual traffic from your computer network.</div>
<form id="captcha-form" action="/sorry/index"><div id="recaptcha" class="g-recaptcha"></div></form>
</body></html>"#;

fn classic_page(first: usize, n: usize) -> String {
    let mut body = String::from(r#"<html><body><div id="search"><div id="rso">"#);
    for i in first..first + n {
        body.push_str(&format!(
            r#"<div class="g"><div class="r"><a href="/url?q=https%3A%2F%2Fr{i}.example%2F&amp;sa=U"><h3>r{i}</h3></a></div></div>"#
        ));
    }
    body.push_str("</div></div></body></html>");
    body
}

#[test]
fn captcha_page_is_bot_detection() {
    let a = agent("a1", "classic");
    let mut client = ScriptedClient::new("classic", vec![CLASSIC_CAPTCHA.to_string()]);
    let rec = session(&a, &mut client);
    assert_eq!(rec.failure, Some(Failure::BotDetected));
    assert!(rec.ranked_list.is_none());
}

#[test]
fn thirty_seven_results_are_accepted() {
    let a = agent("a1", "classic");
    let pages = vec![classic_page(0, 10), classic_page(10, 10), classic_page(20, 10), classic_page(30, 7)];
    let mut client = ScriptedClient::new("classic", pages);
    let rec = session(&a, &mut client);
    assert!(rec.is_success(), "{:?}", rec.detail);
    let list = rec.ranked_list.unwrap();
    assert_eq!(list.len(), 37);
    assert_eq!(list.items()[36], "https://r36.example/");
}

#[test]
fn crashes_and_slow_pages_are_recorded() {
    let a = agent("a1", "classic");
    let mut crash = ScriptedClient::new("classic", vec![classic_page(0, 10)]).failing(ClientFault::Crash("oom".into()));
    let rec = session(&a, &mut crash);
    assert_eq!(rec.failure, Some(Failure::Crash));
    assert!(rec.ranked_list.is_none());

    let pages = (0..5).map(|p| classic_page(p * 10, 10)).collect();
    let mut slow = ScriptedClient::new("classic", pages).with_page_latency(Duration::seconds(50));
    let rec = session(&a, &mut slow);
    assert_eq!(rec.failure, Some(Failure::Timeout));
    assert!(rec.duration() <= Duration::seconds(200));
}

struct Factory {
    sim: Arc<Simulator>,
    faults: Vec<(AgentId, InjectedFault)>,
}

impl AgentFactory for Factory {
    fn client(&self, agent: &AgentConfig) -> Box<dyn EngineClient> {
        let faults = self
            .faults
            .iter()
            .filter(|(a, _)| *a == agent.agent)
            .map(|(_, f)| f.clone())
            .collect();
        Box::new(SimClient::new(self.sim.clone(), agent.clone(), 8).with_faults(faults))
    }

    fn clock(&self, agent: &AgentConfig) -> Box<dyn Clock> {
        Box::new(
            VirtualClock::new(t0())
                .with_jitter(Duration::milliseconds(2000), SeedKey::new(8).str(agent.agent.as_str())),
        )
    }
}

fn queries() -> Vec<QueryId> {
    (0..3).map(|i| QueryId::new(format!("q{i}"))).collect()
}

#[test]
fn consecutive_sessions_carry_no_state() {
    let agents = vec![agent("a1", "classic"), agent("a2", "scroll")];
    let plans = plan_fleet(&agents, &queries(), t0(), Schedule::default()).unwrap();
    let factory = Factory { sim: simulator(0.3), faults: vec![] };
    let recs = run_fleet(
        plans,
        &factory,
        &ExtractorRegistry::builtin(),
        SessionOptions::default(),
        Execution::default(),
        &mut |_| Ok(()),
    )
    .unwrap();
    assert_eq!(recs.len(), 6);
    for a in &agents {
        let mine: Vec<_> = recs.iter().filter(|r| r.agent == *a).collect();
        for w in mine.windows(2) {
            assert!(!w[0].state_at_end.is_empty());
            let carried: Vec<_> = w[1].state_at_start.iter().filter(|k| w[0].state_at_end.contains(k)).collect();
            assert!(carried.is_empty(), "{carried:?}");
            assert!(w[1].state_at_start.is_empty());
        }
        for r in mine {
            assert!(r.is_success());
            assert!(matches!(&r.cleaning, Some(CleanOutcome::Cleaned { cleared }) if cleared.len() == 5));
        }
    }
}

#[test]
fn sticky_cookie_quarantines_the_agent() {
    let agents = vec![agent("a1", "classic"), agent("a2", "sidebar")];
    let plans = plan_fleet(&agents, &queries(), t0(), Schedule::default()).unwrap();
    let fault = InjectedFault {
        query: Some(QueryId::new("q0")),
        kind: FaultKind::StickyCookie,
    };
    let factory = Factory {
        sim: simulator(0.0),
        faults: vec![(AgentId::new("a1"), fault)],
    };
    let mut seen = Vec::new();
    let recs = run_fleet(
        plans,
        &factory,
        &ExtractorRegistry::builtin(),
        SessionOptions::default(),
        Execution::Sequential,
        &mut |r| {
            seen.push((r.plan.session_index, r.agent.agent.clone()));
            Ok(())
        },
    )
    .unwrap();
    let a1: Vec<_> = recs.iter().filter(|r| r.agent.agent.as_str() == "a1").collect();
    assert!(a1[0].is_success());
    match &a1[0].cleaning {
        Some(CleanOutcome::Dirty { remaining }) => assert_eq!(remaining, &vec!["cookie:track.persist".to_string()]),
        other => panic!("expected a dirty clean, got {other:?}"),
    }
    assert_eq!(a1[1].failure, Some(Failure::Quarantined));
    assert!(a1[1].state_at_start.contains(&"cookie:track.persist".to_string()));
    assert!(recs.iter().filter(|r| r.agent.agent.as_str() == "a2").all(|r| r.is_success()));
    let order: Vec<usize> = seen.iter().map(|(i, _)| *i).collect();
    assert_eq!(order, vec![0, 0, 1, 1, 2, 2]);
}

#[test]
fn fleet_starts_stay_synchronised() {
    let agents: Vec<AgentConfig> = (0..6)
        .map(|i| agent(&format!("a{i}"), ["classic", "sidebar", "scroll"][i % 3]))
        .collect();
    let plans = plan_fleet(&agents, &queries(), t0(), Schedule::default()).unwrap();
    let factory = Factory { sim: simulator(0.5), faults: vec![] };
    let run = |exec| {
        run_fleet(
            plans.clone(),
            &factory,
            &ExtractorRegistry::builtin(),
            SessionOptions::default(),
            exec,
            &mut |_| Ok(()),
        )
        .unwrap()
    };
    let recs = run(Execution::default());
    assert_eq!(recs, run(Execution::Sequential));
    for i in 0..3 {
        let starts: Vec<_> = recs.iter().filter(|r| r.plan.session_index == i).map(|r| r.actual_start).collect();
        let spread = *starts.iter().max().unwrap() - *starts.iter().min().unwrap();
        assert!(spread <= Duration::seconds(5), "session {i}: spread {spread}");
    }
}
