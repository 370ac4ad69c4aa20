//! Fixture corpus replay.
//!
//! A corpus is a directory tree of captured pages. Every `NAME.html` has a
//! sidecar `NAME.expected.json`:
//!
//! ```json
//! { "engine": "classic", "page_index": 0,
//!   "expected": ["https://..."], "ads": ["https://..."] }
//! ```
//!
//! `expected` is the hand-labelled organic list in order; `ads` lists the
//! sponsored targets present on the page, none of which may be extracted. An
//! optional `extractors/` directory at the corpus root overrides the shipped
//! extractor rules.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{parse_with, ExtractorRegistry, SerpError};
use crate::ids::EngineId;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    engine: String,
    #[serde(default)]
    page_index: usize,
    expected: Vec<String>,
    #[serde(default)]
    ads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureOutcome {
    Pass { results: usize },
    Mismatch { diff: String },
    /// Sidecar missing, unreadable or malformed.
    Corrupt { reason: String },
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureResult {
    pub page: PathBuf,
    pub outcome: FixtureOutcome,
    /// Extracted URLs, when parsing ran.
    pub parsed: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayReport {
    pub fixtures: Vec<FixtureResult>,
}

impl ReplayReport {
    pub fn passed(&self) -> usize {
        self.count(|o| matches!(o, FixtureOutcome::Pass { .. }))
    }

    pub fn mismatches(&self) -> usize {
        self.count(|o| matches!(o, FixtureOutcome::Mismatch { .. }))
    }

    pub fn failures(&self) -> usize {
        self.fixtures.len() - self.passed()
    }

    fn count(&self, f: impl Fn(&FixtureOutcome) -> bool) -> usize {
        self.fixtures.iter().filter(|r| f(&r.outcome)).count()
    }

    pub fn is_clean(&self) -> bool {
        self.failures() == 0
    }

    /// Human-readable report, one block per fixture.
    pub fn render(&self, root: &Path) -> String {
        let mut out = String::new();
        for r in &self.fixtures {
            let name = r.page.strip_prefix(root).unwrap_or(&r.page).display();
            match &r.outcome {
                FixtureOutcome::Pass { results } => {
                    let _ = writeln!(out, "ok       {name} ({results} results)");
                }
                FixtureOutcome::Mismatch { diff } => {
                    let _ = writeln!(out, "MISMATCH {name}");
                    for line in diff.lines() {
                        let _ = writeln!(out, "    {line}");
                    }
                }
                FixtureOutcome::Corrupt { reason } => {
                    let _ = writeln!(out, "CORRUPT  {name}: {reason}");
                }
                FixtureOutcome::Error { reason } => {
                    let _ = writeln!(out, "ERROR    {name}: {reason}");
                }
            }
        }
        let _ = writeln!(
            out,
            "{} fixtures, {} passed, {} mismatched, {} other failures",
            self.fixtures.len(),
            self.passed(),
            self.mismatches(),
            self.failures() - self.mismatches()
        );
        out
    }
}

fn collect_pages(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            if path.file_name().is_some_and(|n| n == "extractors") {
                continue;
            }
            collect_pages(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "html") {
            out.push(path);
        }
    }
    Ok(())
}

fn sidecar_path(page: &Path) -> PathBuf {
    let stem = page.file_stem().unwrap_or_default().to_string_lossy();
    page.with_file_name(format!("{stem}.expected.json"))
}

/// Unified-style context around the first divergence.
fn diff_context(expected: &[String], actual: &[String]) -> String {
    let first = expected
        .iter()
        .zip(actual)
        .position(|(e, a)| e != a)
        .unwrap_or(expected.len().min(actual.len()));
    let mut out = format!(
        "expected {} results, got {}; first difference at rank {}\n",
        expected.len(),
        actual.len(),
        first + 1
    );
    let lo = first.saturating_sub(2);
    let hi = (first + 3).min(expected.len().max(actual.len()));
    for i in lo..hi {
        let e = expected.get(i).map(String::as_str).unwrap_or("<none>");
        let a = actual.get(i).map(String::as_str).unwrap_or("<none>");
        if e == a {
            let _ = writeln!(out, "  {:>3} {e}", i + 1);
        } else {
            let _ = writeln!(out, "- {:>3} {e}", i + 1);
            let _ = writeln!(out, "+ {:>3} {a}", i + 1);
        }
    }
    out
}

fn replay_one(page: &Path, registry: &ExtractorRegistry) -> FixtureResult {
    let result = |outcome, parsed| FixtureResult {
        page: page.to_path_buf(),
        outcome,
        parsed,
    };
    let sidecar = sidecar_path(page);
    let sidecar: Sidecar = match fs::read_to_string(&sidecar) {
        Err(e) => {
            return result(
                FixtureOutcome::Corrupt {
                    reason: format!("{}: {e}", sidecar.display()),
                },
                vec![],
            )
        }
        Ok(text) => match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(e) => {
                return result(
                    FixtureOutcome::Corrupt {
                        reason: format!("{}: {e}", sidecar.display()),
                    },
                    vec![],
                )
            }
        },
    };
    let html = match fs::read_to_string(page) {
        Ok(h) => h,
        Err(e) => return result(FixtureOutcome::Error { reason: e.to_string() }, vec![]),
    };
    let extractor = match registry.for_engine(&EngineId::new(sidecar.engine.clone())) {
        Ok(x) => x,
        Err(e) => return result(FixtureOutcome::Error { reason: e.to_string() }, vec![]),
    };
    let parsed: Vec<String> = parse_with(&extractor, &html, sidecar.page_index)
        .entries
        .into_iter()
        .map(|e| e.url)
        .collect();

    let leaked: Vec<&String> = parsed.iter().filter(|u| sidecar.ads.contains(u)).collect();
    let outcome = if !leaked.is_empty() {
        FixtureOutcome::Mismatch {
            diff: format!(
                "ad URLs extracted as organic: {leaked:?}\n{}",
                diff_context(&sidecar.expected, &parsed)
            ),
        }
    } else if parsed != sidecar.expected {
        FixtureOutcome::Mismatch {
            diff: diff_context(&sidecar.expected, &parsed),
        }
    } else {
        FixtureOutcome::Pass {
            results: parsed.len(),
        }
    };
    result(outcome, parsed)
}

/// Parses every fixture under `root` and compares against its sidecar.
pub fn replay_corpus(root: &Path) -> Result<ReplayReport, SerpError> {
    let mut registry = ExtractorRegistry::builtin();
    let overrides = root.join("extractors");
    if overrides.is_dir() {
        registry.load_dir(&overrides)?;
    }
    let mut pages = Vec::new();
    collect_pages(root, &mut pages).map_err(|e| SerpError::Io(format!("{}: {e}", root.display())))?;
    pages.sort();
    let fixtures = pages.iter().map(|p| replay_one(p, &registry)).collect();
    Ok(ReplayReport { fixtures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_marks_divergence() {
        let e: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let a: Vec<String> = ["a", "x", "c"].map(String::from).to_vec();
        let d = diff_context(&e, &a);
        assert!(d.contains("first difference at rank 2"));
        assert!(d.contains("-   2 b"));
        assert!(d.contains("+   2 x"));
    }
}
