use std::fs;
use std::path::{Path, PathBuf};

use serp_audit::commands::{cmd_analyze, cmd_replay, cmd_run, AnalyzeOptions, RunOverrides, ANALYSIS_FILES};
use serp_audit::orchestrator::Failure;
use serp_audit::store::{read_sessions, verify_run, RunManifest};
use serp_audit::{BrowserId, EngineId, Execution, QueryId};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).to_path_buf()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("fleet.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn six_engine_fleet_matches_completion_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = root().join("../../configs/six-engines.toml");
    let out = tmp.path().join("run");
    let summary = cmd_run(&cfg, &out, &RunOverrides::default(), Execution::default()).unwrap();

    // 98 machines x 2 browsers x 4 queries; four agents crash on every query
    // and 13 Yandex agents are challenged on one.
    assert_eq!(summary.counts.agents, 196);
    assert_eq!(summary.counts.sessions, 784);
    assert_eq!(summary.counts.failed, 4 * 4 + 13);
    assert_eq!(summary.counts.completed, 784 - 29);
    assert_eq!(verify_run(&out).unwrap(), summary.counts);
    assert_eq!(RunManifest::load(&out).unwrap().counts().unwrap(), summary.counts);

    let t = &summary.completion;
    let q = QueryId::new("us elections");
    let cell = |e: &str, b: &str| t.completed_in(&q, &EngineId::new(e), &BrowserId::new(b));
    let firefox = ["baidu", "bing", "duckduckgo", "google", "yahoo", "yandex"].map(|e| cell(e, "firefox"));
    let chrome = ["baidu", "bing", "duckduckgo", "google", "yahoo", "yandex"].map(|e| cell(e, "chrome"));
    assert_eq!(firefox, [15, 16, 17, 17, 15, 6]);
    assert_eq!(chrome, [16, 15, 17, 16, 16, 13]);
    let q = QueryId::new("joe biden");
    assert_eq!(t.completed_in(&q, &EngineId::new("yandex"), &BrowserId::new("firefox")), 16);
    let rendered = t.render();
    assert!(rendered.contains("16/6 (*)"), "{rendered}");
    assert!(rendered.contains("16/13 (*)"), "{rendered}");
    assert_eq!(t.failures_by_cause()[&Failure::BotDetected], 13);

    let failed: Vec<_> = read_sessions(&out)
        .unwrap()
        .into_iter()
        .filter(|s| s.failure.is_some())
        .collect();
    assert!(failed.iter().all(|s| s.ranked_list.is_none()));
}

const ONE_ENGINE: &str = r#"run_id = "one"
seed = 3
start = "2020-02-26T08:00:00Z"
queries = ["us elections"]

[[engines]]
id = "solo"
layout = "sidebar"
volatility = VOL
browser_volatility = { firefox = FFVOL }

[[groups]]
engine = "solo"
browsers = ["chrome", "firefox"]
machines = 8

[analysis]
permutations = 400
"#;

fn one_engine(v: f64, ff: f64) -> String {
    ONE_ENGINE.replace("FFVOL", &ff.to_string()).replace("VOL", &v.to_string())
}

fn run_and_analyze(dir: &Path, text: &str) -> PathBuf {
    let cfg = write_config(dir, text);
    let out = dir.join("run");
    cmd_run(&cfg, &out, &RunOverrides::default(), Execution::default()).unwrap();
    cmd_analyze(&out, &AnalyzeOptions::default()).unwrap();
    out
}

#[test]
fn zero_volatility_gives_unit_matrices_and_no_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_and_analyze(tmp.path(), &one_engine(0.0, 0.0));
    let csv = fs::read_to_string(out.join("analysis/matrices.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!(r.split(',').nth(5), Some("1"), "{r}");
    }
    let sig = fs::read_to_string(out.join("analysis/significance.csv")).unwrap();
    assert_eq!(sig.lines().nth(1), Some("us elections,solo,-,-,-,-"));
}

#[test]
fn browser_volatility_populates_the_browser_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_and_analyze(tmp.path(), &one_engine(0.2, 0.8));
    let sig = fs::read_to_string(out.join("analysis/significance.csv")).unwrap();
    let row = sig.lines().nth(1).unwrap();
    assert!(row.starts_with("us elections,solo,"), "{row}");
    assert!(row.split(',').skip(2).all(|c| c != "-"), "{row}");
}

#[test]
fn analysis_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(root().join("../../configs/demo.toml")).unwrap();
    let ra = run_and_analyze(a.path(), &text);
    let rb = run_and_analyze(b.path(), &text);
    for f in ANALYSIS_FILES {
        let x = fs::read(ra.join("analysis").join(f)).unwrap();
        let y = fs::read(rb.join("analysis").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let first = fs::read(ra.join("analysis/effect_tests.csv")).unwrap();
    cmd_analyze(&ra, &AnalyzeOptions::default()).unwrap();
    assert_eq!(fs::read(ra.join("analysis/effect_tests.csv")).unwrap(), first);
    assert_eq!(
        fs::read(ra.join("sessions.jsonl")).unwrap(),
        fs::read(rb.join("sessions.jsonl")).unwrap()
    );
}

#[test]
fn config_and_missing_log_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[[agents]]\nid = \"extra\"\nmachine = \"solo-m00\"\nbrowser = \"chrome\"\nengine = \"solo\"\n",
        one_engine(0.1, 0.1)
    );
    let cfg = write_config(tmp.path(), &text);
    let err = cmd_run(&cfg, &tmp.path().join("run"), &RunOverrides::default(), Execution::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("fleet.toml:"), "{err}");

    fs::create_dir(tmp.path().join("empty")).unwrap();
    let err = cmd_analyze(&tmp.path().join("empty"), &AnalyzeOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn overrides_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &one_engine(0.1, 0.1));
    let out = tmp.path().join("run");
    let o = RunOverrides {
        seed: Some(77),
        depth: Some(30),
        cadence_seconds: Some(600),
        gap_seconds: Some(300),
    };
    cmd_run(&cfg, &out, &o, Execution::default()).unwrap();
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.get("seed"), Some("77"));
    assert_eq!(m.get("depth"), Some("30"));
    assert!(read_sessions(&out)
        .unwrap()
        .iter()
        .all(|s| s.ranked_list.as_ref().unwrap().len() == 30));
    assert!(cmd_run(&cfg, &out, &o, Execution::default()).is_err());
}

#[test]
fn replay_flags_a_changed_expectation() {
    let corpus = root().join("fixtures/serp");
    let clean = cmd_replay(&corpus).unwrap();
    assert_eq!(clean.exit_code(), 0, "{}", clean.text);
    assert_eq!(clean.report.passed(), 16);

    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("serp");
    for layout in ["classic", "sidebar", "scroll"] {
        fs::create_dir_all(copy.join(layout)).unwrap();
        for e in fs::read_dir(corpus.join(layout)).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), copy.join(layout).join(e.file_name())).unwrap();
        }
    }
    let side = copy.join("classic/p2-duplicate-rank-3-and-7.expected.json");
    let text = fs::read_to_string(&side).unwrap();
    fs::write(&side, text.replacen("https://site24.example/p/24", "https://site24.example/p/other", 1)).unwrap();
    let out = cmd_replay(&copy).unwrap();
    assert_eq!(out.exit_code(), 1);
    assert_eq!(out.report.mismatches(), 1);
    assert!(out.text.contains("p2-duplicate-rank-3-and-7"), "{}", out.text);
}
