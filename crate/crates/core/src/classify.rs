//! Rule-based source categories and top-k composition profiles.
//!
//! A ruleset is an ordered text file of `pattern<TAB>category` lines. A
//! pattern is either an exact domain or `*.suffix`, which matches the
//! suffix itself and every subdomain of it. Blank lines and lines starting
//! with `#` are ignored; an optional first line `#! version N` names the
//! ruleset version.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EngineId, QueryId};
use crate::metrics::RankedList;
use crate::serp::result_domain;

pub const BUILTIN_RULESET: &str = include_str!("../rules/ruleset.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "think-tank/academic")]
    ThinkTankAcademic,
    #[serde(rename = "social-media")]
    SocialMedia,
    #[serde(rename = "reference")]
    Reference,
    #[serde(rename = "news-aggregator")]
    NewsAggregator,
    #[serde(rename = "legacy-media")]
    LegacyMedia,
    #[serde(rename = "infotainment")]
    Infotainment,
    #[serde(rename = "government")]
    Government,
    #[serde(rename = "fact-checking")]
    FactChecking,
    #[serde(rename = "commerce")]
    Commerce,
    #[serde(rename = "campaign")]
    Campaign,
    #[serde(rename = "alternative-media")]
    AlternativeMedia,
    #[serde(rename = "not-available")]
    NotAvailable,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::ThinkTankAcademic,
        Category::SocialMedia,
        Category::Reference,
        Category::NewsAggregator,
        Category::LegacyMedia,
        Category::Infotainment,
        Category::Government,
        Category::FactChecking,
        Category::Commerce,
        Category::Campaign,
        Category::AlternativeMedia,
        Category::NotAvailable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ThinkTankAcademic => "think-tank/academic",
            Category::SocialMedia => "social-media",
            Category::Reference => "reference",
            Category::NewsAggregator => "news-aggregator",
            Category::LegacyMedia => "legacy-media",
            Category::Infotainment => "infotainment",
            Category::Government => "government",
            Category::FactChecking => "fact-checking",
            Category::Commerce => "commerce",
            Category::Campaign => "campaign",
            Category::AlternativeMedia => "alternative-media",
            Category::NotAvailable => "not-available",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("ruleset line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no lists to profile")]
    NoLists,
    #[error("csv output failed: {0}")]
    Output(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pattern {
    Exact(String),
    Suffix(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    line: usize,
    pattern: Pattern,
    category: Category,
}

impl Rule {
    fn matches(&self, domain: &str) -> bool {
        match &self.pattern {
            Pattern::Exact(d) => domain == d,
            Pattern::Suffix(s) => {
                domain == s
                    || (domain.len() > s.len()
                        && domain.ends_with(s.as_str())
                        && domain.as_bytes()[domain.len() - s.len() - 1] == b'.')
            }
        }
    }

    fn id(&self) -> String {
        match &self.pattern {
            Pattern::Exact(d) => format!("line {}: {d}", self.line),
            Pattern::Suffix(s) => format!("line {}: *.{s}", self.line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ruleset {
    pub version: String,
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCategory {
    pub domain: String,
    pub category: Category,
    /// The matching rule, or `no-rule`.
    pub evidence: String,
}

impl Ruleset {
    pub fn parse(text: &str) -> Result<Self, ClassifyError> {
        let mut version = String::from("unversioned");
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if let Some(v) = raw.strip_prefix("#! version") {
                version = v.trim().to_string();
                continue;
            }
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| ClassifyError::Rule { line, message };
            let (pat, cat) = trimmed
                .split_once('\t')
                .ok_or_else(|| err("expected pattern<TAB>category".into()))?;
            let category: Category = cat.trim().parse().map_err(err)?;
            let pat = pat.trim().to_ascii_lowercase();
            let pattern = match pat.strip_prefix("*.") {
                Some(s) if !s.is_empty() && !s.contains('*') => Pattern::Suffix(s.to_string()),
                Some(_) => return Err(err(format!("bad suffix pattern {pat:?}"))),
                None if pat.is_empty() || pat.contains('*') || pat.contains('/') => {
                    return Err(err(format!("bad domain pattern {pat:?}")))
                }
                None => Pattern::Exact(pat),
            };
            rules.push(Rule {
                line,
                pattern,
                category,
            });
        }
        Ok(Ruleset { version, rules })
    }

    pub fn builtin() -> Self {
        Ruleset::parse(BUILTIN_RULESET).expect("shipped ruleset parses")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn classify_domain(domain: &str, ruleset: &Ruleset) -> DomainCategory {
    let domain = domain.trim().trim_end_matches('.').to_ascii_lowercase();
    match ruleset.rules.iter().find(|r| r.matches(&domain)) {
        Some(r) => DomainCategory {
            category: r.category,
            evidence: r.id(),
            domain,
        },
        None => DomainCategory {
            domain,
            category: Category::NotAvailable,
            evidence: "no-rule".into(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionProfile {
    pub engine: EngineId,
    pub query: QueryId,
    pub k: usize,
    /// The selected domains, most frequent first.
    pub domains: Vec<(DomainCategory, usize)>,
    /// Every category, zero shares included.
    pub shares: BTreeMap<Category, f64>,
}

/// Counts domains over every list's top-`k` results, keeps the `k` most
/// frequent (ties broken by domain name) and reports each category's share
/// of those domains.
pub fn composition_profile(
    engine: &EngineId,
    query: &QueryId,
    lists: &[&RankedList],
    ruleset: &Ruleset,
    k: usize,
) -> Result<CompositionProfile, ClassifyError> {
    if k < 1 {
        return Err(ClassifyError::InvalidK);
    }
    if lists.is_empty() {
        return Err(ClassifyError::NoLists);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for list in lists {
        for url in list.items().iter().take(k) {
            if let Some(d) = result_domain(url) {
                *freq.entry(d).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);

    let domains: Vec<(DomainCategory, usize)> =
        ranked.into_iter().map(|(d, n)| (classify_domain(&d, ruleset), n)).collect();
    let mut counts: BTreeMap<Category, usize> = Category::ALL.into_iter().map(|c| (c, 0)).collect();
    for (dc, _) in &domains {
        *counts.get_mut(&dc.category).expect("all categories present") += 1;
    }
    let total = domains.len();
    let shares = counts
        .into_iter()
        .map(|(c, n)| (c, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
        .collect();
    Ok(CompositionProfile {
        engine: engine.clone(),
        query: query.clone(),
        k,
        domains,
        shares,
    })
}

/// `engine,query,k,category,share,domains` with one row per category.
pub fn write_profiles_csv<W: Write>(profiles: &[CompositionProfile], out: W) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| ClassifyError::Output(e.to_string());
    w.write_record(["engine", "query", "k", "category", "share", "domains"]).map_err(e)?;
    for p in profiles {
        for (c, share) in &p.shares {
            let n = p.domains.iter().filter(|(d, _)| d.category == *c).count();
            w.write_record([
                p.engine.as_str(),
                p.query.as_str(),
                &p.k.to_string(),
                c.as_str(),
                &format!("{share}"),
                &n.to_string(),
            ])
            .map_err(e)?;
        }
    }
    w.flush().map_err(|x| ClassifyError::Output(x.to_string()))
}
