//! Run directories: an append-only session log, raw page captures and a
//! manifest.
//!
//! ```text
//! run/
//!   config.toml        byte-for-byte copy of the fleet config
//!   sessions.jsonl     one session record per line, in completion order
//!   captures/          raw HTML, one file per captured page
//!   manifest.txt       key = value summary written when the run ends
//! ```
//!
//! Lines in `sessions.jsonl` are written whole and flushed one at a time, so
//! an interrupted run leaves a readable prefix; a torn final line is skipped
//! on read.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::QueryId;
use crate::metrics::{ListOrigin, RankedList};
use crate::orchestrator::{AgentConfig, CleanOutcome, Failure, SessionRecord, Step};
use crate::serp::ParseWarning;

pub const SCHEMA_VERSION: u32 = 1;
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const CAPTURES_DIR: &str = "captures";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    MissingSessions(PathBuf),
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("run directory {0} already holds a run")]
    Exists(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredCapture {
    pub page_index: usize,
    pub captured_at: DateTime<Utc>,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// The on-disk form of a [`SessionRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSession {
    pub schema: u32,
    pub agent: AgentConfig,
    pub session_index: usize,
    pub query: QueryId,
    pub scheduled_start: DateTime<Utc>,
    pub actual_start: DateTime<Utc>,
    pub actual_end: DateTime<Utc>,
    pub steps: Vec<Step>,
    pub captures: Vec<StoredCapture>,
    pub ranked_list: Option<Vec<String>>,
    pub failure: Option<Failure>,
    pub detail: Option<String>,
    pub warnings: Vec<ParseWarning>,
    pub state_at_start: Vec<String>,
    pub state_at_end: Vec<String>,
    pub cleaning: Option<CleanOutcome>,
}

impl StoredSession {
    pub fn ranked(&self) -> Option<RankedList> {
        let items = self.ranked_list.as_ref()?;
        Some(RankedList::dedup_first(items.iter().cloned()).with_origin(ListOrigin {
            agent: self.agent.agent.clone(),
            engine: self.agent.engine.clone(),
            browser: self.agent.browser.clone(),
            query: self.query.clone(),
            session_index: self.session_index,
        }))
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writer for a fresh run directory.
pub struct RunWriter {
    dir: PathBuf,
    sessions: BufWriter<File>,
    written: usize,
}

impl RunWriter {
    /// Creates `dir` (which must not already contain a session log) and stores
    /// `config_text` as its config.
    pub fn create(dir: &Path, config_text: &str) -> Result<Self, StoreError> {
        let log = dir.join(SESSIONS_FILE);
        if log.exists() {
            return Err(StoreError::Exists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir.join(CAPTURES_DIR)).map_err(io(dir))?;
        let cfg = dir.join(CONFIG_FILE);
        fs::write(&cfg, config_text).map_err(io(&cfg))?;
        let file = OpenOptions::new().create_new(true).append(true).open(&log).map_err(io(&log))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            sessions: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> usize {
        self.written
    }

    /// Writes the record's captures, then appends its line and flushes.
    pub fn append(&mut self, rec: &SessionRecord) -> Result<(), StoreError> {
        let mut captures = Vec::with_capacity(rec.captures.len());
        for c in &rec.captures {
            let rel = format!(
                "{CAPTURES_DIR}/s{:03}/{}/page{:02}.html",
                rec.plan.session_index,
                file_safe(rec.agent.agent.as_str()),
                c.page_index
            );
            let path = self.dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, &c.html).map_err(io(&path))?;
            captures.push(StoredCapture {
                page_index: c.page_index,
                captured_at: c.captured_at,
                path: rel,
                sha256: sha256_hex(c.html.as_bytes()),
                bytes: c.html.len(),
            });
        }
        let stored = StoredSession {
            schema: SCHEMA_VERSION,
            agent: rec.agent.clone(),
            session_index: rec.plan.session_index,
            query: rec.plan.query.clone(),
            scheduled_start: rec.plan.scheduled_start,
            actual_start: rec.actual_start,
            actual_end: rec.actual_end,
            steps: rec.steps.clone(),
            captures,
            ranked_list: rec.ranked_list.as_ref().map(|l| l.items().to_vec()),
            failure: rec.failure,
            detail: rec.detail.clone(),
            warnings: rec.warnings.clone(),
            state_at_start: rec.state_at_start.clone(),
            state_at_end: rec.state_at_end.clone(),
            cleaning: rec.cleaning.clone(),
        };
        let line = serde_json::to_string(&stored).expect("session record serialises");
        let log = self.dir.join(SESSIONS_FILE);
        writeln!(self.sessions, "{line}").map_err(io(&log))?;
        self.sessions.flush().map_err(io(&log))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self, manifest: &RunManifest) -> Result<PathBuf, StoreError> {
        let log = self.dir.join(SESSIONS_FILE);
        self.sessions.flush().map_err(io(&log))?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, manifest.render()).map_err(io(&path))?;
        Ok(self.dir)
    }
}

/// Reads every complete line of a run's session log.
pub fn read_sessions(dir: &Path) -> Result<Vec<StoredSession>, StoreError> {
    let path = dir.join(SESSIONS_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::MissingSessions(path)),
        Err(e) => return Err(io(&path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io(&path))?;
        if n == 0 {
            break;
        }
        line += 1;
        if !buf.ends_with('\n') {
            break;
        }
        let text = buf.trim_end();
        if text.is_empty() {
            continue;
        }
        let rec: StoredSession = serde_json::from_str(text).map_err(|e| StoreError::BadRecord {
            path: path.clone(),
            line,
            message: e.to_string(),
        })?;
        if rec.schema != SCHEMA_VERSION {
            return Err(StoreError::BadRecord {
                path: path.clone(),
                line,
                message: format!("schema {} (this build reads {SCHEMA_VERSION})", rec.schema),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Run summary. `entries` keeps insertion order so manifests diff cleanly.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub agents: usize,
    pub sessions: usize,
    pub completed: usize,
    pub failed: usize,
    pub captures: usize,
}

impl RunCounts {
    pub fn from_sessions(sessions: &[StoredSession]) -> Self {
        let agents = sessions.iter().map(|s| &s.agent.agent).collect::<std::collections::BTreeSet<_>>().len();
        RunCounts {
            agents,
            sessions: sessions.len(),
            completed: sessions.iter().filter(|s| s.failure.is_none()).count(),
            failed: sessions.iter().filter(|s| s.failure.is_some()).count(),
            captures: sessions.iter().map(|s| s.captures.len()).sum(),
        }
    }
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_counts(&mut self, c: RunCounts) {
        self.push("agents", c.agents);
        self.push("sessions", c.sessions);
        self.push("completed", c.completed);
        self.push("failed", c.failed);
        self.push("captures", c.captures);
    }

    pub fn counts(&self) -> Result<RunCounts, StoreError> {
        let n = |k: &str| -> Result<usize, StoreError> {
            self.get(k)
                .ok_or_else(|| StoreError::Manifest(format!("missing {k}")))?
                .parse()
                .map_err(|_| StoreError::Manifest(format!("{k} is not a count")))
        };
        Ok(RunCounts {
            agents: n("agents")?,
            sessions: n("sessions")?,
            completed: n("completed")?,
            failed: n("failed")?,
            captures: n("captures")?,
        })
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut m = RunManifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| StoreError::Manifest(format!("line {}: expected `key = value`", i + 1)))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        RunManifest::parse(&fs::read_to_string(&path).map_err(io(&path))?)
    }
}

/// Checks that the manifest agrees with the stored config and session log.
pub fn verify_run(dir: &Path) -> Result<RunCounts, StoreError> {
    let manifest = RunManifest::load(dir)?;
    let cfg = dir.join(CONFIG_FILE);
    let text = fs::read(&cfg).map_err(io(&cfg))?;
    let hash = sha256_hex(&text);
    if manifest.get("config_sha256") != Some(hash.as_str()) {
        return Err(StoreError::Manifest(format!(
            "config hash {hash} does not match manifest {:?}",
            manifest.get("config_sha256")
        )));
    }
    let sessions = read_sessions(dir)?;
    let derived = RunCounts::from_sessions(&sessions);
    let stated = manifest.counts()?;
    if derived != stated {
        return Err(StoreError::Manifest(format!(
            "manifest counts {stated:?} differ from the session log {derived:?}"
        )));
    }
    for s in &sessions {
        for c in &s.captures {
            let p = dir.join(&c.path);
            let bytes = fs::read(&p).map_err(io(&p))?;
            if sha256_hex(&bytes) != c.sha256 {
                return Err(StoreError::Manifest(format!("capture {} changed since the run", c.path)));
            }
        }
    }
    Ok(derived)
}

/// Sessions grouped by query, in query order of first appearance.
pub fn by_query(sessions: &[StoredSession]) -> BTreeMap<usize, (QueryId, Vec<&StoredSession>)> {
    let mut out: BTreeMap<usize, (QueryId, Vec<&StoredSession>)> = BTreeMap::new();
    for s in sessions {
        out.entry(s.session_index)
            .or_insert_with(|| (s.query.clone(), Vec::new()))
            .1
            .push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::ids::{AgentId, BrowserId, EngineId, MachineId};
    use crate::orchestrator::SessionPlan;
    use crate::serp::SerpCapture;

    fn record(i: usize) -> SessionRecord {
        let t = Utc.with_ymd_and_hms(2020, 2, 26, 8, 0, 0).unwrap();
        let agent = AgentConfig {
            agent: AgentId::new(format!("a/{i}")),
            machine: MachineId::new("m"),
            browser: BrowserId::new("b"),
            engine: EngineId::new("e"),
        };
        SessionRecord {
            plan: SessionPlan {
                agent: agent.agent.clone(),
                session_index: i,
                query: QueryId::new("q"),
                scheduled_start: t,
                cadence_seconds: 420,
                min_gap_seconds: 240,
            },
            captures: vec![SerpCapture {
                html: format!("<html>{i}</html>"),
                engine: agent.engine.clone(),
                query: "q".into(),
                agent: agent.agent.clone(),
                page_index: 0,
                captured_at: t,
            }],
            agent,
            actual_start: t,
            actual_end: t,
            steps: vec![Step::Landing, Step::Query, Step::Navigate],
            ranked_list: Some(RankedList::new(["https://x.test/1"]).unwrap()),
            failure: None,
            detail: None,
            warnings: vec![],
            state_at_start: vec![],
            state_at_end: vec!["cookie:sid".into()],
            cleaning: None,
        }
    }

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let mut w = RunWriter::create(&run, "seed = 1\n").unwrap();
        w.append(&record(0)).unwrap();
        w.append(&record(1)).unwrap();
        let back = read_sessions(&run).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].captures[0].path, "captures/s001/a_1/page00.html");
        assert_eq!(back[0].ranked().unwrap().items(), ["https://x.test/1"]);

        let mut m = RunManifest::default();
        m.push("config_sha256", sha256_hex(b"seed = 1\n"));
        m.set_counts(RunCounts::from_sessions(&back));
        w.finish(&m).unwrap();
        assert_eq!(verify_run(&run).unwrap().sessions, 2);
        assert!(matches!(RunWriter::create(&run, ""), Err(StoreError::Exists(_))));
    }

    #[test]
    fn torn_tail_leaves_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path(), "").unwrap();
        w.append(&record(0)).unwrap();
        drop(w);
        let log = dir.path().join(SESSIONS_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        write!(f, "{{\"schema\":1,\"agent\"").unwrap();
        assert_eq!(read_sessions(dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn missing_log() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_sessions(dir.path()), Err(StoreError::MissingSessions(_))));
    }
}
