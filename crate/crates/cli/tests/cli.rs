use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serp-audit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = workspace().join("configs/demo.toml");
    let o = bin(&["run", cfg.to_str().unwrap(), "--out", run.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("36 sessions"), "{}", text(&o));

    let o = bin(&[
        "--sequential",
        "analyze",
        run.to_str().unwrap(),
        "--metric",
        "rbo_80",
        "--rbo-p",
        "0.9,0.7",
        "--permutations",
        "99",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let matrices = fs::read_to_string(run.join("analysis/matrices.csv")).unwrap();
    assert!(matrices.lines().skip(1).all(|l| l.split(',').nth(1) == Some("rbo_80")));
}

#[test]
fn duplicate_seat_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fs::read_to_string(workspace().join("configs/demo.toml")).unwrap();
    cfg.push_str("\n[[agents]]\nid = \"again\"\nmachine = \"scroll-engine-m01\"\nbrowser = \"chrome\"\nengine = \"scroll-engine\"\n");
    let path = tmp.path().join("dup.toml");
    fs::write(&path, cfg).unwrap();
    let o = bin(&["run", path.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("dup.toml:"), "{}", text(&o));
}

#[test]
fn missing_sessions_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["analyze", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[test]
fn replay_exit_codes() {
    let corpus = workspace().join("crates/core/fixtures/serp");
    let o = bin(&["replay", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scroll");
    fs::create_dir(&dir).unwrap();
    let src = corpus.join("scroll");
    for name in ["s1-ten-organic-three-ads.html", "s1-ten-organic-three-ads.expected.json"] {
        fs::copy(src.join(name), dir.join(name)).unwrap();
    }
    let side = dir.join("s1-ten-organic-three-ads.expected.json");
    let edited = fs::read_to_string(&side).unwrap().replace("issues/9\"", "issues/99\"");
    fs::write(&side, edited).unwrap();
    let o = bin(&["replay", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}
