//! Organic result extraction from captured result pages.

use std::collections::{BTreeSet, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, EngineId, QueryId};
use crate::metrics::RankedList;

pub mod corpus;
pub mod extractor;
pub mod normalize;

pub use extractor::{Extractor, ExtractorRegistry, PageLink};
pub use normalize::{normalize_url, result_domain, NormalizeError, NormalizeOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerpError {
    #[error("no extractor registered for engine {0}")]
    UnsupportedEngine(EngineId),
    #[error("extractor rules {origin}: {message}")]
    Rules { origin: String, message: String },
    #[error("result pages missing at indices {missing:?}")]
    PageGap { missing: Vec<usize> },
    #[error("result page index {0} supplied twice")]
    DuplicatePage(usize),
    #[error("{0}")]
    Io(String),
}

/// Non-fatal observations made while parsing a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParseWarning {
    /// No organic result survived extraction.
    EmptyParse,
    BadLink { raw: String, reason: String },
}

/// One captured result page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerpCapture {
    pub html: String,
    pub engine: EngineId,
    pub query: QueryId,
    pub agent: AgentId,
    pub page_index: usize,
    pub captured_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub url: String,
    /// 1-based. Within a page until [`assemble_ranked_list`] assigns global ranks.
    pub rank: usize,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageParse {
    pub page_index: usize,
    pub entries: Vec<ResultEntry>,
    pub warnings: Vec<ParseWarning>,
}

/// Extracts the organic results of one capture using the extractor
/// registered for its engine.
pub fn parse_capture(
    capture: &SerpCapture,
    registry: &ExtractorRegistry,
) -> Result<PageParse, SerpError> {
    let extractor = registry.for_engine(&capture.engine)?;
    Ok(parse_with(&extractor, &capture.html, capture.page_index))
}

pub fn parse_with(extractor: &Extractor, html: &str, page_index: usize) -> PageParse {
    let (links, warnings) = extractor.extract(html);
    let entries = links
        .into_iter()
        .enumerate()
        .map(|(i, l)| ResultEntry {
            url: l.url,
            rank: i + 1,
            domain: l.domain,
        })
        .collect();
    PageParse {
        page_index,
        entries,
        warnings,
    }
}

/// Session result list assembled from its pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub entries: Vec<ResultEntry>,
}

impl Assembled {
    pub fn ranked_list(&self) -> RankedList {
        RankedList::new(self.entries.iter().map(|e| e.url.clone()))
            .expect("assembled entries are unique")
    }
}

/// Concatenates pages in index order, keeps the first occurrence of every URL,
/// truncates to `depth` and assigns global 1-based ranks. Page indices must be
/// exactly `0..n`.
pub fn assemble_ranked_list(pages: &[PageParse], depth: usize) -> Result<Assembled, SerpError> {
    let mut indices = BTreeSet::new();
    for page in pages {
        if !indices.insert(page.page_index) {
            return Err(SerpError::DuplicatePage(page.page_index));
        }
    }
    if let Some(&max) = indices.iter().next_back() {
        let missing: Vec<usize> = (0..=max).filter(|i| !indices.contains(i)).collect();
        if !missing.is_empty() {
            return Err(SerpError::PageGap { missing });
        }
    }

    let mut ordered: Vec<&PageParse> = pages.iter().collect();
    ordered.sort_by_key(|p| p.page_index);

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    'pages: for page in ordered {
        for entry in &page.entries {
            if entries.len() == depth {
                break 'pages;
            }
            if seen.insert(entry.url.as_str()) {
                entries.push(ResultEntry {
                    url: entry.url.clone(),
                    rank: entries.len() + 1,
                    domain: entry.domain.clone(),
                });
            }
        }
    }
    Ok(Assembled { entries })
}
