//! Declarative per-layout extraction rules.
//!
//! An extractor file is TOML:
//!
//! ```toml
//! name = "classic"
//! version = 2
//! engines = ["classic"]
//! base_url = "https://www.classic.test/"
//! scroll = false
//! organic = ["div.g div.r > a"]
//! exclude = ["div.ads", "div.related-questions"]
//! challenge = ["form#captcha-form"]
//! next_page = "a#pnnext"
//! tracking_params = ["ved"]
//!
//! [[redirect]]
//! path = "/url"
//! param = "q"
//! ```
//!
//! `organic` selects result links in document order; a link is dropped when it
//! or any ancestor matches an `exclude` selector. A page matching any
//! `challenge` selector is a bot-detection interstitial.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use scraper::{ElementRef, Html, Selector};
use serde::Deserialize;
use url::Url;

use super::normalize::{result_domain, NormalizeOptions, RedirectWrapper};
use super::{ParseWarning, SerpError};
use crate::ids::EngineId;

const BUILTIN: &[(&str, &str)] = &[
    ("classic.toml", include_str!("../../extractors/classic.toml")),
    ("sidebar.toml", include_str!("../../extractors/sidebar.toml")),
    ("scroll.toml", include_str!("../../extractors/scroll.toml")),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    name: String,
    version: u32,
    #[serde(default)]
    engines: Vec<String>,
    base_url: String,
    #[serde(default)]
    scroll: bool,
    organic: Vec<String>,
    #[serde(default)]
    exclude: Vec<String>,
    #[serde(default)]
    challenge: Vec<String>,
    next_page: Option<String>,
    #[serde(default)]
    link_attribute: Option<String>,
    #[serde(default)]
    tracking_params: Vec<String>,
    #[serde(default)]
    redirect: Vec<RedirectWrapper>,
}

/// One organic link found on a page, before global ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageLink {
    pub url: String,
    pub domain: String,
}

#[derive(Debug)]
pub struct Extractor {
    name: String,
    version: u32,
    engines: Vec<EngineId>,
    base_url: Url,
    scroll: bool,
    organic: Selector,
    exclude: Vec<Selector>,
    challenge: Vec<Selector>,
    next_page: Option<Selector>,
    link_attribute: String,
    normalize: NormalizeOptions,
}

fn compile(selector: &str, origin: &str) -> Result<Selector, SerpError> {
    Selector::parse(selector).map_err(|e| SerpError::Rules {
        origin: origin.to_owned(),
        message: format!("bad selector {selector:?}: {e}"),
    })
}

impl Extractor {
    /// Parses an extractor definition; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, SerpError> {
        let rules: RuleFile = toml::from_str(text).map_err(|e| SerpError::Rules {
            origin: origin.to_owned(),
            message: e.to_string(),
        })?;
        if rules.organic.is_empty() {
            return Err(SerpError::Rules {
                origin: origin.to_owned(),
                message: "at least one organic selector is required".into(),
            });
        }
        let base_url = Url::parse(&rules.base_url).map_err(|e| SerpError::Rules {
            origin: origin.to_owned(),
            message: format!("bad base_url: {e}"),
        })?;
        let organic = compile(&rules.organic.join(", "), origin)?;
        let exclude = rules
            .exclude
            .iter()
            .map(|s| compile(s, origin))
            .collect::<Result<_, _>>()?;
        let challenge = rules
            .challenge
            .iter()
            .map(|s| compile(s, origin))
            .collect::<Result<_, _>>()?;
        let next_page = rules
            .next_page
            .as_deref()
            .map(|s| compile(s, origin))
            .transpose()?;

        let mut normalize = NormalizeOptions::default().with_tracking_params(rules.tracking_params);
        for w in rules.redirect {
            if !normalize.redirect_wrappers.contains(&w) {
                normalize.redirect_wrappers.push(w);
            }
        }
        let engines = if rules.engines.is_empty() {
            vec![EngineId::new(rules.name.clone())]
        } else {
            rules.engines.into_iter().map(EngineId::new).collect()
        };

        Ok(Extractor {
            name: rules.name,
            version: rules.version,
            engines,
            base_url,
            scroll: rules.scroll,
            organic,
            exclude,
            challenge,
            next_page,
            link_attribute: rules.link_attribute.unwrap_or_else(|| "href".into()),
            normalize,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn engines(&self) -> &[EngineId] {
        &self.engines
    }

    /// Infinite-scroll layouts deliver all results as page 0.
    pub fn is_scroll(&self) -> bool {
        self.scroll
    }

    pub fn normalize_options(&self) -> &NormalizeOptions {
        &self.normalize
    }

    fn excluded(&self, el: &ElementRef<'_>) -> bool {
        if self.exclude.iter().any(|s| s.matches(el)) {
            return true;
        }
        el.ancestors()
            .filter_map(ElementRef::wrap)
            .any(|anc| self.exclude.iter().any(|s| s.matches(&anc)))
    }

    /// Organic links in document order, deduplicated by normalised URL.
    pub fn extract(&self, html: &str) -> (Vec<PageLink>, Vec<ParseWarning>) {
        let doc = Html::parse_document(html);
        let mut seen = std::collections::HashSet::new();
        let mut links = Vec::new();
        let mut warnings = Vec::new();
        for el in doc.select(&self.organic) {
            if self.excluded(&el) {
                continue;
            }
            let Some(href) = el.value().attr(&self.link_attribute) else {
                continue;
            };
            let resolved = if href.starts_with('/') && !href.starts_with("//") {
                // engine-relative wrapper; normalisation unwraps or rejects it
                href.to_owned()
            } else {
                match self.base_url.join(href) {
                    Ok(u) => u.to_string(),
                    Err(_) => href.to_owned(),
                }
            };
            match self.normalize.normalize(&resolved) {
                Ok(url) => {
                    if seen.insert(url.clone()) {
                        let domain = result_domain(&url).unwrap_or_default();
                        links.push(PageLink { url, domain });
                    }
                }
                Err(e) => warnings.push(ParseWarning::BadLink {
                    raw: e.raw,
                    reason: e.reason,
                }),
            }
        }
        if links.is_empty() {
            warnings.push(ParseWarning::EmptyParse);
        }
        (links, warnings)
    }

    pub fn is_challenge(&self, html: &str) -> bool {
        if self.challenge.is_empty() {
            return false;
        }
        let doc = Html::parse_document(html);
        self.challenge.iter().any(|s| doc.select(s).next().is_some())
    }

    /// Absolute URL of the next result page, if the layout links one.
    pub fn next_page_url(&self, html: &str) -> Option<Url> {
        let selector = self.next_page.as_ref()?;
        let doc = Html::parse_document(html);
        let href = doc.select(selector).next()?.value().attr("href")?.to_owned();
        self.base_url.join(&href).ok()
    }
}

/// Extractors keyed by the engine ids they serve. Read-only once built.
#[derive(Debug, Clone, Default)]
pub struct ExtractorRegistry {
    by_engine: BTreeMap<EngineId, Arc<Extractor>>,
    by_name: BTreeMap<String, Arc<Extractor>>,
}

impl ExtractorRegistry {
    /// The extractors shipped with the crate (`classic`, `sidebar`, `scroll`).
    pub fn builtin() -> Self {
        let mut reg = ExtractorRegistry::default();
        for (origin, text) in BUILTIN {
            let ex = Extractor::from_toml(text, origin).expect("shipped extractor rules are valid");
            reg.register(ex);
        }
        reg
    }

    /// Loads every `*.toml` in `dir` on top of the current set.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), SerpError> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| SerpError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)
                .map_err(|e| SerpError::Io(format!("{}: {e}", path.display())))?;
            self.register(Extractor::from_toml(&text, &path.display().to_string())?);
        }
        Ok(())
    }

    pub fn register(&mut self, extractor: Extractor) {
        let ex = Arc::new(extractor);
        for engine in ex.engines() {
            self.by_engine.insert(engine.clone(), Arc::clone(&ex));
        }
        self.by_name.insert(ex.name().to_owned(), ex);
    }

    /// Routes `engine` to the extractor called `layout`.
    pub fn bind(&mut self, engine: EngineId, layout: &str) -> Result<(), SerpError> {
        let ex = self
            .by_name
            .get(layout)
            .cloned()
            .ok_or_else(|| SerpError::UnsupportedEngine(EngineId::new(layout)))?;
        self.by_engine.insert(engine, ex);
        Ok(())
    }

    pub fn for_engine(&self, engine: &EngineId) -> Result<Arc<Extractor>, SerpError> {
        self.by_engine
            .get(engine)
            .cloned()
            .ok_or_else(|| SerpError::UnsupportedEngine(engine.clone()))
    }

    pub fn by_name(&self, name: &str) -> Option<Arc<Extractor>> {
        self.by_name.get(name).cloned()
    }
}
