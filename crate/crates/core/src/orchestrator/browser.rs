//! Browser state and post-session cleaning.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five kinds of state removed after every session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateClass {
    History,
    Cache,
    Cookies,
    LocalStorage,
    SessionStorage,
}

impl StateClass {
    pub const ALL: [StateClass; 5] = [
        StateClass::History,
        StateClass::Cache,
        StateClass::Cookies,
        StateClass::LocalStorage,
        StateClass::SessionStorage,
    ];

    fn prefix(self) -> &'static str {
        match self {
            StateClass::History => "history",
            StateClass::Cache => "cache",
            StateClass::Cookies => "cookie",
            StateClass::LocalStorage => "local",
            StateClass::SessionStorage => "session",
        }
    }
}

/// Client-side state of one agent's browser.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BrowserContext {
    pub history: Vec<String>,
    pub cache: BTreeMap<String, usize>,
    pub cookies: BTreeMap<String, String>,
    pub local_storage: BTreeMap<String, String>,
    pub session_storage: BTreeMap<String, String>,
    // fault injection: cookies that survive clearing
    sticky: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanConfirmation {
    pub cleared: Vec<StateClass>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("browser state survived cleaning: {remaining:?}")]
pub struct HygieneError {
    pub failed: Vec<StateClass>,
    pub remaining: Vec<String>,
}

impl BrowserContext {
    /// Every stored key, prefixed by its class (`cookie:sid`, `history:...`).
    pub fn keys(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for h in &self.history {
            out.insert(format!("history:{h}"));
        }
        for k in self.cache.keys() {
            out.insert(format!("cache:{k}"));
        }
        for k in self.cookies.keys() {
            out.insert(format!("cookie:{k}"));
        }
        for k in self.local_storage.keys() {
            out.insert(format!("local:{k}"));
        }
        for k in self.session_storage.keys() {
            out.insert(format!("session:{k}"));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        StateClass::ALL.iter().all(|&c| self.class_empty(c))
    }

    fn class_empty(&self, class: StateClass) -> bool {
        match class {
            StateClass::History => self.history.is_empty(),
            StateClass::Cache => self.cache.is_empty(),
            StateClass::Cookies => self.cookies.is_empty(),
            StateClass::LocalStorage => self.local_storage.is_empty(),
            StateClass::SessionStorage => self.session_storage.is_empty(),
        }
    }

    pub fn visit(&mut self, url: &str) {
        self.history.push(url.to_owned());
        *self.cache.entry(url.to_owned()).or_default() += 1;
    }

    /// Sets a cookie that the next clear will fail to remove.
    pub fn inject_sticky_cookie(&mut self, name: &str, value: &str) {
        self.cookies.insert(name.to_owned(), value.to_owned());
        self.sticky.insert(name.to_owned());
    }

    fn clear(&mut self) {
        self.history.clear();
        self.cache.clear();
        let sticky = &self.sticky;
        self.cookies.retain(|k, _| sticky.contains(k));
        self.local_storage.clear();
        self.session_storage.clear();
    }
}

/// Clears history, cache, cookies, local and session storage, then verifies
/// that nothing is left.
pub fn clean_state(ctx: &mut BrowserContext) -> Result<CleanConfirmation, HygieneError> {
    ctx.clear();
    let failed: Vec<StateClass> = StateClass::ALL
        .iter()
        .copied()
        .filter(|&c| !ctx.class_empty(c))
        .collect();
    if failed.is_empty() {
        Ok(CleanConfirmation {
            cleared: StateClass::ALL.to_vec(),
        })
    } else {
        let remaining = ctx
            .keys()
            .into_iter()
            .filter(|k| failed.iter().any(|c| k.starts_with(&format!("{}:", c.prefix()))))
            .collect();
        Err(HygieneError { failed, remaining })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirty() -> BrowserContext {
        let mut ctx = BrowserContext::default();
        ctx.visit("https://engine.test/");
        ctx.cookies.insert("sid".into(), "1".into());
        ctx.local_storage.insert("theme".into(), "dark".into());
        ctx.session_storage.insert("tab".into(), "7".into());
        ctx
    }

    #[test]
    fn clears_all_five_classes() {
        let mut ctx = dirty();
        assert_eq!(ctx.keys().len(), 5);
        let ok = clean_state(&mut ctx).unwrap();
        assert_eq!(ok.cleared, StateClass::ALL.to_vec());
        assert!(ctx.keys().is_empty());
    }

    #[test]
    fn sticky_cookie_is_a_hygiene_error() {
        let mut ctx = dirty();
        ctx.inject_sticky_cookie("NID", "tracker");
        let err = clean_state(&mut ctx).unwrap_err();
        assert_eq!(err.failed, vec![StateClass::Cookies]);
        assert_eq!(err.remaining, vec!["cookie:NID".to_string()]);
    }
}
