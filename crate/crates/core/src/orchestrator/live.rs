//! HTTP client for real engines. Builds on the same extractor rules as the
//! offline path; not exercised by the test suite.

use std::sync::Arc;
use std::time::Duration as StdDuration;

use super::browser::BrowserContext;
use super::client::{ClientFault, EngineClient};
use super::clock::Clock;
use super::SessionPlan;
use crate::ids::EngineId;
use crate::serp::Extractor;

#[derive(Debug, Clone)]
pub struct LiveEndpoint {
    pub engine: EngineId,
    pub landing_url: String,
    /// `{q}` is replaced by the percent-encoded query.
    pub search_url: String,
    pub user_agent: String,
}

pub struct LiveClient {
    endpoint: LiveEndpoint,
    extractor: Arc<Extractor>,
    http: reqwest::blocking::Client,
    last: Option<String>,
}

impl LiveClient {
    pub fn new(endpoint: LiveEndpoint, extractor: Arc<Extractor>, timeout: StdDuration) -> Result<Self, ClientFault> {
        let http = reqwest::blocking::Client::builder()
            .user_agent(endpoint.user_agent.clone())
            .timeout(timeout)
            .build()
            .map_err(|e| ClientFault::Crash(e.to_string()))?;
        Ok(LiveClient {
            endpoint,
            extractor,
            http,
            last: None,
        })
    }

    fn get(&self, url: &str, ctx: &mut BrowserContext) -> Result<String, ClientFault> {
        ctx.visit(url);
        let resp = self.http.get(url).send().map_err(|e| {
            if e.is_timeout() {
                ClientFault::Timeout(e.to_string())
            } else {
                ClientFault::Crash(e.to_string())
            }
        })?;
        for c in resp.cookies() {
            ctx.cookies.insert(c.name().to_string(), c.value().to_string());
        }
        resp.text().map_err(|e| ClientFault::Crash(e.to_string()))
    }
}

impl EngineClient for LiveClient {
    fn engine(&self) -> &EngineId {
        &self.endpoint.engine
    }

    fn landing(&mut self, _plan: &SessionPlan, ctx: &mut BrowserContext, _clock: &mut dyn Clock) -> Result<(), ClientFault> {
        self.last = None;
        let url = self.endpoint.landing_url.clone();
        self.get(&url, ctx).map(|_| ())
    }

    fn search(&mut self, plan: &SessionPlan, ctx: &mut BrowserContext, _clock: &mut dyn Clock) -> Result<String, ClientFault> {
        let q: String = url::form_urlencoded::byte_serialize(plan.query.as_str().as_bytes()).collect();
        let url = self.endpoint.search_url.replace("{q}", &q);
        let html = self.get(&url, ctx)?;
        self.last = Some(html.clone());
        Ok(html)
    }

    fn next_page(&mut self, _plan: &SessionPlan, ctx: &mut BrowserContext, _clock: &mut dyn Clock) -> Result<Option<String>, ClientFault> {
        let Some(next) = self.last.as_deref().and_then(|h| self.extractor.next_page_url(h)) else {
            return Ok(None);
        };
        let html = self.get(next.as_str(), ctx)?;
        self.last = Some(html.clone());
        Ok(Some(html))
    }
}
