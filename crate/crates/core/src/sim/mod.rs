//! Deterministic pseudo search engine.
//!
//! Every simulated engine has a base ranking per query. A served ranking is
//! the base ranking's top `results` items perturbed by a seeded stream keyed
//! on `(seed, engine, query, agent, session)`:
//!
//! 1. the pool tail beyond `results` is shuffled;
//! 2. each displayed position is replaced by the next tail item with
//!    probability `SUBSTITUTION_RATE * v`;
//! 3. `results` adjacent transpositions are attempted at uniformly drawn
//!    positions, each applied with probability `v`.
//!
//! Every draw is consumed whatever its outcome, so rankings for different
//! volatilities share one random stream and `v = 0` reproduces the base
//! ranking exactly. The served list is rendered into the layout's HTML so the
//! extraction path is exercised end to end.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, BrowserId, EngineId, QueryId};
use crate::seed::SeedKey;

pub mod pools;
pub mod render;

pub use pools::{cross_engine_pools, query_slug, PoolAssignment, PoolRequest};
pub use render::Layout;

/// Fraction of displayed positions substituted at volatility 1.
pub const SUBSTITUTION_RATE: f64 = 0.5;
/// Transposition attempts per displayed result.
pub const SWAPS_PER_ITEM: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("engine {engine} has no ranking for query {query:?}")]
    UnknownQuery { engine: EngineId, query: QueryId },
    #[error("unknown simulated engine {0}")]
    UnknownEngine(EngineId),
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible overlap among {triple:?}: {detail}")]
    Infeasible {
        triple: (EngineId, EngineId, EngineId),
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEngineSpec {
    pub engine: EngineId,
    pub layout: Layout,
    pub base_rankings: BTreeMap<QueryId, Vec<String>>,
    pub volatility: f64,
    /// Per-browser volatility overrides.
    #[serde(default)]
    pub browser_volatility: BTreeMap<BrowserId, f64>,
    pub seed: u64,
    /// Results served per query.
    pub results: usize,
    pub per_page: usize,
    pub ads_per_page: usize,
}

/// One rendered result page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPage {
    pub page_index: usize,
    pub html: String,
}

/// Who is asking; the perturbation stream is keyed on all of it.
#[derive(Debug, Clone, Copy)]
pub struct Requester<'a> {
    pub agent: &'a AgentId,
    pub browser: &'a BrowserId,
    pub session: usize,
}

impl SimEngineSpec {
    pub fn new(engine: impl Into<EngineId>, layout: Layout, seed: u64) -> Self {
        SimEngineSpec {
            engine: engine.into(),
            layout,
            base_rankings: BTreeMap::new(),
            volatility: 0.0,
            browser_volatility: BTreeMap::new(),
            seed,
            results: 50,
            per_page: 10,
            ads_per_page: 3,
        }
    }

    pub fn with_ranking(mut self, query: impl Into<QueryId>, ranking: Vec<String>) -> Self {
        self.base_rankings.insert(query.into(), ranking);
        self
    }

    pub fn with_volatility(mut self, v: f64) -> Self {
        self.volatility = v;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(format!("{}: {m}", self.engine)));
        for v in std::iter::once(&self.volatility).chain(self.browser_volatility.values()) {
            if !(0.0..=1.0).contains(v) {
                return bad(format!("volatility {v} outside [0, 1]"));
            }
        }
        if self.results == 0 || self.per_page == 0 {
            return bad("results and per_page must be positive".into());
        }
        for (q, ranking) in &self.base_rankings {
            if ranking.len() < self.results {
                return bad(format!(
                    "pool for {q:?} has {} entries, fewer than the {} served",
                    ranking.len(),
                    self.results
                ));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = ranking.iter().find(|u| !seen.insert(u.as_str())) {
                return bad(format!("duplicate pool entry {dup} for {q:?}"));
            }
        }
        Ok(())
    }

    pub fn volatility_for(&self, browser: &BrowserId) -> f64 {
        self.browser_volatility
            .get(browser)
            .copied()
            .unwrap_or(self.volatility)
    }

    fn base(&self, query: &QueryId) -> Result<&[String], SimError> {
        self.base_rankings
            .get(query)
            .map(Vec::as_slice)
            .ok_or_else(|| SimError::UnknownQuery {
                engine: self.engine.clone(),
                query: query.clone(),
            })
    }

    /// The served ranking, before rendering.
    pub fn ranking(&self, query: &QueryId, who: Requester<'_>) -> Result<Vec<String>, SimError> {
        let base = self.base(query)?;
        let v = self.volatility_for(who.browser);
        let mut rng = SeedKey::new(self.seed)
            .str(self.engine.as_str())
            .str(query.as_str())
            .str(who.agent.as_str())
            .num(who.session as u64)
            .rng();
        Ok(perturb(base, self.results, v, &mut rng))
    }

    /// Renders the served ranking into result pages. Scroll layouts produce a
    /// single page; paged layouts split into `per_page` chunks.
    pub fn generate_serp(&self, query: &QueryId, who: Requester<'_>) -> Result<Vec<SimPage>, SimError> {
        let ranking = self.ranking(query, who)?;
        let slug = query_slug(query);
        let chunks: Vec<&[String]> = if self.layout.is_scroll() {
            vec![&ranking[..]]
        } else {
            ranking.chunks(self.per_page).collect()
        };
        let n_pages = chunks.len();
        let pages = chunks
            .into_iter()
            .enumerate()
            .map(|(page_index, organic)| {
                let n_ads = if self.layout.is_scroll() {
                    self.ads_per_page * organic.len().div_ceil(10).max(1)
                } else {
                    self.ads_per_page
                };
                let ads: Vec<String> = (0..n_ads)
                    .map(|i| format!("https://ads.{}.test/aclk?ad={slug}-{page_index}-{i}", self.engine))
                    .collect();
                let related: Vec<String> = (0..2)
                    .map(|i| format!("https://related.{}.test/{slug}/{page_index}-{i}", self.engine))
                    .collect();
                let html = render::render(
                    self.layout,
                    &render::PageContent {
                        engine: self.engine.as_str(),
                        query: query.as_str(),
                        page_index,
                        organic,
                        ads: &ads,
                        related: &related,
                        has_next: page_index + 1 < n_pages,
                    },
                );
                SimPage { page_index, html }
            })
            .collect();
        Ok(pages)
    }
}

/// Applies the substitution + transposition model described in the module
/// docs.
pub fn perturb<R: Rng>(base: &[String], results: usize, v: f64, rng: &mut R) -> Vec<String> {
    let n = results.min(base.len());
    let mut shown = base[..n].to_vec();
    let mut tail = base[n..].to_vec();
    tail.shuffle(rng);

    let mut next = 0;
    for slot in shown.iter_mut() {
        let u: f64 = rng.gen();
        if u < v * SUBSTITUTION_RATE && next < tail.len() {
            *slot = tail[next].clone();
            next += 1;
        }
    }
    if n >= 2 {
        for _ in 0..n * SWAPS_PER_ITEM {
            let pos = rng.gen_range(0..(n - 1) as u64) as usize;
            let u: f64 = rng.gen();
            if u < v {
                shown.swap(pos, pos + 1);
            }
        }
    }
    shown
}

/// A set of simulated engines.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    engines: BTreeMap<EngineId, SimEngineSpec>,
}

impl Simulator {
    pub fn new(specs: Vec<SimEngineSpec>) -> Result<Self, SimError> {
        let mut engines = BTreeMap::new();
        for spec in specs {
            spec.validate()?;
            engines.insert(spec.engine.clone(), spec);
        }
        Ok(Simulator { engines })
    }

    pub fn engine(&self, id: &EngineId) -> Result<&SimEngineSpec, SimError> {
        self.engines
            .get(id)
            .ok_or_else(|| SimError::UnknownEngine(id.clone()))
    }

    pub fn engines(&self) -> impl Iterator<Item = &SimEngineSpec> {
        self.engines.values()
    }
}

/// Builds one spec per engine over pools with the requested overlap, for
/// every query.
pub fn specs_from_pools(
    assignment: &PoolAssignment,
    queries: &[QueryId],
    domains: &[String],
    template: impl Fn(&EngineId) -> SimEngineSpec,
) -> Vec<SimEngineSpec> {
    let mut specs: BTreeMap<EngineId, SimEngineSpec> = assignment
        .engines
        .iter()
        .map(|e| (e.clone(), template(e)))
        .collect();
    for q in queries {
        for (engine, urls) in assignment.urls_for(q, domains) {
            if let Some(spec) = specs.get_mut(&engine) {
                spec.base_rankings.insert(q.clone(), urls);
            }
        }
    }
    specs.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serp::{assemble_ranked_list, parse_with, ExtractorRegistry};

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("https://site{}.test/p/{i}", i % 7)).collect()
    }

    fn spec(layout: Layout, v: f64) -> SimEngineSpec {
        SimEngineSpec::new("sim", layout, 7)
            .with_ranking("us elections", pool(200))
            .with_volatility(v)
    }

    fn who<'a>(agent: &'a AgentId, browser: &'a BrowserId, session: usize) -> Requester<'a> {
        Requester { agent, browser, session }
    }

    #[test]
    fn zero_volatility_is_base_ranking() {
        let s = spec(Layout::Classic, 0.0);
        let q = QueryId::new("us elections");
        let b = BrowserId::new("browser-a");
        for a in ["a1", "a2", "a3"] {
            let a = AgentId::new(a);
            assert_eq!(s.ranking(&q, who(&a, &b, 0)).unwrap(), pool(200)[..50].to_vec());
        }
    }

    #[test]
    fn captures_are_byte_identical_on_repeat() {
        let s = spec(Layout::Sidebar, 0.7);
        let q = QueryId::new("us elections");
        let (a, b) = (AgentId::new("a1"), BrowserId::new("browser-b"));
        assert_eq!(
            s.generate_serp(&q, who(&a, &b, 3)).unwrap(),
            s.generate_serp(&q, who(&a, &b, 3)).unwrap()
        );
    }

    #[test]
    fn perturbed_rankings_stay_unique() {
        let s = spec(Layout::Classic, 1.0);
        let q = QueryId::new("us elections");
        let b = BrowserId::new("x");
        for i in 0..50 {
            let a = AgentId::new(format!("a{i}"));
            let r = s.ranking(&q, who(&a, &b, i)).unwrap();
            let set: HashSet<_> = r.iter().collect();
            assert_eq!(set.len(), 50);
        }
    }

    #[test]
    fn unknown_query_errors() {
        let s = spec(Layout::Classic, 0.0);
        let (a, b) = (AgentId::new("a"), BrowserId::new("b"));
        assert!(matches!(
            s.ranking(&QueryId::new("nope"), who(&a, &b, 0)),
            Err(SimError::UnknownQuery { .. })
        ));
    }

    #[test]
    fn rendered_pages_parse_back_to_the_ranking() {
        let reg = ExtractorRegistry::builtin();
        let q = QueryId::new("us elections");
        let (a, b) = (AgentId::new("a9"), BrowserId::new("browser-a"));
        for layout in [Layout::Classic, Layout::Sidebar, Layout::Scroll] {
            let s = spec(layout, 0.6);
            let expected = s.ranking(&q, who(&a, &b, 1)).unwrap();
            let pages = s.generate_serp(&q, who(&a, &b, 1)).unwrap();
            assert_eq!(pages.len(), if layout.is_scroll() { 1 } else { 5 });
            let ex = reg.by_name(layout.extractor_name()).unwrap();
            let parsed: Vec<_> = pages.iter().map(|p| parse_with(&ex, &p.html, p.page_index)).collect();
            let got = assemble_ranked_list(&parsed, 50).unwrap().ranked_list();
            assert_eq!(got.items(), &expected[..], "{layout:?}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(spec(Layout::Classic, 1.5).validate().is_err());
        let short = SimEngineSpec::new("s", Layout::Classic, 1).with_ranking("q", pool(10));
        assert!(short.validate().is_err());
        let dup = SimEngineSpec::new("s", Layout::Classic, 1)
            .with_ranking("q", vec!["https://a.test/".to_string(); 60]);
        assert!(dup.validate().is_err());
    }
}
