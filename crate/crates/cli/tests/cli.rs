use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shardsmith")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn model(name: &str) -> String {
    corpus_dir().join(format!("{name}.nf")).to_string_lossy().into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn analyze_writes_config_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, rep) = (path(dir.path(), "fw.cfg"), path(dir.path(), "fw.report"));
    let o = run(&["analyze", &model("fw"), "--seed", "3", "--verify-samples", "5000", "--out", &cfg, "--report", &rep]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("verdict: shared-nothing (R1)"));
    assert!(text.contains("BEGIN MACHINE-READABLE REPORT"));
    assert_eq!(fs::read_to_string(&rep).unwrap(), text);
    assert!(fs::metadata(&cfg).unwrap().len() > 0);
}

#[test]
fn analyze_is_deterministic_under_a_seed() {
    let args = ["analyze", &model("nat"), "--seed", "9", "--verify-samples", "2000"];
    assert_eq!(stdout(&run(&args)), stdout(&run(&args)));
}

#[test]
fn analyze_reports_the_drawn_seed() {
    let o = run(&["analyze", &model("nop"), "--verify-samples", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("seed: "));
}

#[test]
fn lock_fallback_exits_with_two() {
    let o = run(&["analyze", &model("lb"), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("deployment: locks"));
    let strict = run(&["analyze", &model("lb"), "--seed", "1", "--strategy", "shared-nothing"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("R4"));
}

#[test]
fn simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, trace, csv) = (path(dir.path(), "c"), path(dir.path(), "t"), path(dir.path(), "m.csv"));
    assert!(run(&["analyze", &model("fw"), "--seed", "1", "--verify-samples", "2000", "--out", &cfg])
        .status
        .success());
    for format in ["text", "binary"] {
        let g = run(&[
            "gen-traffic", "--out", &trace, "--packets", "3000", "--reply-ratio", "0.3", "--reply-iface", "1", "--seed",
            "2", "--format", format,
        ]);
        assert!(g.status.success());
        let s = run(&["simulate", &model("fw"), "--config", &cfg, "--trace", &trace, "--cores", "4", "--seed", "1", "--csv", &csv]);
        assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
        assert!(stdout(&s).contains("equivalent: 3000 packets compared"));
    }
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.starts_with("cores,"));
}

#[test]
fn simulate_refuses_shared_nothing_for_infeasible_models() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, trace) = (path(dir.path(), "c"), path(dir.path(), "t"));
    run(&["analyze", &model("fw"), "--seed", "1", "--verify-samples", "1000", "--out", &cfg]);
    run(&["gen-traffic", "--out", &trace, "--packets", "500", "--seed", "1"]);
    let o = run(&["simulate", &model("lb"), "--config", &cfg, "--trace", &trace, "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("refused"));
    let locks = run(&["simulate", &model("lb"), "--mode", "locks", "--trace", &trace, "--seed", "1"]);
    assert_eq!(locks.status.code(), Some(0));
}

#[test]
fn rebalance_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, trace, out) = (path(dir.path(), "c"), path(dir.path(), "t"), path(dir.path(), "c2"));
    run(&["analyze", &model("fw"), "--seed", "1", "--verify-samples", "1000", "--out", &cfg]);
    run(&["gen-traffic", "--out", &trace, "--distribution", "zipf", "--packets", "20000", "--seed", "4"]);
    let o = run(&["rebalance", "--config", &cfg, "--trace", &trace, "--out", &out]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("max/mean before"));
    let s = run(&["simulate", &model("fw"), "--config", &out, "--trace", &trace, "--seed", "1"]);
    assert_eq!(s.status.code(), Some(0));
}

#[test]
fn corpus_check_passes_on_the_bundled_corpus() {
    let o = run(&["corpus-check", "--seed", "5", "--packets", "3000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 9);
}

#[test]
fn corpus_check_catches_a_mutated_firewall() {
    let dir = tempfile::tempdir().unwrap();
    let fw = fs::read_to_string(corpus_dir().join("fw.nf")).unwrap();
    let mutated: String = fw
        .lines()
        .map(|l| match l.find("flows (") {
            Some(i) if l.contains("map_") => {
                let end = l[i..].find(')').unwrap() + i + 1;
                format!("{}flows (0:64 0:32){}\n", &l[..i], &l[end..])
            }
            _ => format!("{l}\n"),
        })
        .collect();
    assert_ne!(mutated, fw);
    fs::write(dir.path().join("fw.nf"), mutated).unwrap();
    fs::write(dir.path().join("manifest.txt"), "fw shared-nothing\n").unwrap();
    let o = run(&["corpus-check", "--dir", dir.path().to_str().unwrap(), "--seed", "1", "--packets", "1000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("R4"));
}

#[test]
fn corpus_check_rejects_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["corpus-check", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
