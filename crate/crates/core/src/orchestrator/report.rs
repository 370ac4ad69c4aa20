//! Completion accounting over a finished fleet run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Failure, SessionRecord};
use crate::ids::{BrowserId, EngineId, QueryId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub engine: EngineId,
    pub browser: BrowserId,
}

/// Completed sessions and itemized failures per query and engine×browser cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionTable {
    pub completed: BTreeMap<QueryId, BTreeMap<Cell, usize>>,
    pub failures: BTreeMap<QueryId, BTreeMap<Cell, BTreeMap<Failure, usize>>>,
}

pub fn fleet_report<'a>(records: impl IntoIterator<Item = &'a SessionRecord>) -> CompletionTable {
    let mut t = CompletionTable::default();
    for r in records {
        t.tally(&r.plan.query, &r.agent.engine, &r.agent.browser, r.failure);
    }
    t
}

impl CompletionTable {
    pub fn tally(&mut self, query: &QueryId, engine: &EngineId, browser: &BrowserId, failure: Option<Failure>) {
        let cell = Cell {
            engine: engine.clone(),
            browser: browser.clone(),
        };
        let done = self.completed.entry(query.clone()).or_default().entry(cell.clone()).or_default();
        match failure {
            None => *done += 1,
            Some(f) => {
                *self
                    .failures
                    .entry(query.clone())
                    .or_default()
                    .entry(cell)
                    .or_default()
                    .entry(f)
                    .or_default() += 1
            }
        }
    }

    pub fn completed_in(&self, query: &QueryId, engine: &EngineId, browser: &BrowserId) -> usize {
        let cell = Cell {
            engine: engine.clone(),
            browser: browser.clone(),
        };
        self.completed
            .get(query)
            .and_then(|m| m.get(&cell))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_completed(&self) -> usize {
        self.completed.values().flat_map(|m| m.values()).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.failures
            .values()
            .flat_map(|m| m.values())
            .flat_map(|m| m.values())
            .sum()
    }

    pub fn failures_by_cause(&self) -> BTreeMap<Failure, usize> {
        let mut out = BTreeMap::new();
        for by_cell in self.failures.values() {
            for causes in by_cell.values() {
                for (f, n) in causes {
                    *out.entry(*f).or_default() += n;
                }
            }
        }
        out
    }

    fn engines(&self) -> BTreeSet<&EngineId> {
        self.completed.values().flat_map(|m| m.keys().map(|c| &c.engine)).collect()
    }

    fn browsers(&self) -> BTreeSet<&BrowserId> {
        self.completed.values().flat_map(|m| m.keys().map(|c| &c.browser)).collect()
    }

    /// Browser rows by engine columns. A cell whose count differs between
    /// queries shows `most/fewest (*)`, and the affected queries are listed
    /// below the grid along with failures by cause.
    pub fn render(&self) -> String {
        let engines = self.engines();
        let browsers = self.browsers();
        let mut out = String::from("browser");
        for e in &engines {
            write!(out, "\t{e}").unwrap();
        }
        out.push('\n');
        let mut notes = Vec::new();
        for b in &browsers {
            out.push_str(b.as_str());
            for e in &engines {
                let counts: Vec<(&QueryId, usize)> = self
                    .completed
                    .keys()
                    .map(|q| (q, self.completed_in(q, e, b)))
                    .collect();
                let hi = counts.iter().map(|c| c.1).max().unwrap_or(0);
                let lo = counts.iter().map(|c| c.1).min().unwrap_or(0);
                if hi == lo {
                    write!(out, "\t{hi}").unwrap();
                } else {
                    write!(out, "\t{hi}/{lo} (*)").unwrap();
                    for (q, n) in counts.iter().filter(|c| c.1 < hi) {
                        notes.push(format!("{b}/{e} on {q}: {n}"));
                    }
                }
            }
            out.push('\n');
        }
        for n in notes {
            writeln!(out, "(*) {n}").unwrap();
        }
        for (f, n) in self.failures_by_cause() {
            writeln!(out, "failures\t{}\t{n}", f.as_str()).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;
    use crate::ids::{AgentId, MachineId};
    use crate::orchestrator::{AgentConfig, SessionPlan};

    fn rec(i: usize, engine: &str, browser: &str, query: &str, failure: Option<Failure>) -> SessionRecord {
        let t = Utc.with_ymd_and_hms(2020, 2, 26, 8, 0, 0).unwrap();
        let agent = AgentConfig {
            agent: AgentId::new(format!("{engine}-{browser}-{i}")),
            machine: MachineId::new(format!("m{i}")),
            browser: BrowserId::new(browser),
            engine: EngineId::new(engine),
        };
        SessionRecord {
            plan: SessionPlan {
                agent: agent.agent.clone(),
                session_index: 0,
                query: QueryId::new(query),
                scheduled_start: t,
                cadence_seconds: 420,
                min_gap_seconds: 240,
            },
            agent,
            actual_start: t,
            actual_end: t,
            steps: vec![],
            captures: vec![],
            ranked_list: None,
            failure,
            detail: None,
            warnings: vec![],
            state_at_start: vec![],
            state_at_end: vec![],
            cleaning: None,
        }
    }

    #[test]
    fn all_succeed() {
        let mut recs = Vec::new();
        for e in ["e1", "e2", "e3"] {
            for b in ["browser-a", "browser-b"] {
                for i in 0..5 {
                    recs.push(rec(i, e, b, "q", None));
                }
            }
        }
        let t = fleet_report(&recs);
        for e in ["e1", "e2", "e3"] {
            for b in ["browser-a", "browser-b"] {
                assert_eq!(t.completed_in(&"q".into(), &e.into(), &b.into()), 5);
            }
        }
        assert_eq!(t.total_failures(), 0);
    }

    #[test]
    fn bot_detection_reduces_cell() {
        let mut recs: Vec<_> = (0..5).map(|i| rec(i, "e1", "browser-a", "q", None)).collect();
        for r in recs.iter_mut().take(3) {
            r.failure = Some(Failure::BotDetected);
        }
        let t = fleet_report(&recs);
        assert_eq!(t.completed_in(&"q".into(), &"e1".into(), &"browser-a".into()), 2);
        assert_eq!(t.failures_by_cause()[&Failure::BotDetected], 3);
        assert_eq!(t.total_completed() + t.total_failures(), 5);
    }

    #[test]
    fn render_marks_query_specific_shortfall() {
        let mut recs = Vec::new();
        for q in ["q1", "q2"] {
            for i in 0..4 {
                let f = (q == "q2" && i < 3).then_some(Failure::BotDetected);
                recs.push(rec(i, "e1", "browser-a", q, f));
            }
        }
        let out = fleet_report(&recs).render();
        assert!(out.contains("browser-a\t4/1 (*)"), "{out}");
        assert!(out.contains("failures\tbot-detected\t3"), "{out}");
    }
}
