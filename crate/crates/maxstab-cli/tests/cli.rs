use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_maxstab");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const OPEN_SET: &str = r#"
[set]
kind = "elementary"
window = [0.0, 1.0]
intervals = [[0.3, 0.7]]
[protocol]
levels = [8, 9, 10]
replicas = 300
"#;

#[test]
fn oracle_reports_all_matches() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["oracle", "--seed", "1", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&t.path().join("o"));
    assert_eq!(s["result"], "200/200 exact matches");
}

#[test]
fn missing_seed_is_refused() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["oracle", "--out", "o"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!t.path().join("o").exists());
}

#[test]
fn seed_from_config_is_accepted() {
    let t = TempDir::new().unwrap();
    write(t.path(), "o.toml", "seed = 5\n");
    let o = run(t.path(), &["oracle", "--config", "o.toml", "--out", "o"]);
    assert_eq!(code(&o), 0);
    assert_eq!(summary(&t.path().join("o"))["seed"], 5);
}

#[test]
fn open_set_classifies_stable() {
    let t = TempDir::new().unwrap();
    write(t.path(), "c.toml", OPEN_SET);
    let o = run(t.path(), &["classify-set", "--config", "c.toml", "--seed", "7", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&t.path().join("c"))["verdict"], "STABLE");
}

#[test]
fn every_output_carries_the_stamp() {
    let t = TempDir::new().unwrap();
    write(t.path(), "c.toml", OPEN_SET);
    assert_eq!(code(&run(t.path(), &["classify-set", "--config", "c.toml", "--seed", "7", "--out", "c"])), 0);
    let dir = t.path().join("c");
    let s = summary(&dir);
    let keys: Vec<&String> = s.as_object().unwrap().keys().take(4).collect();
    assert_eq!(keys, ["schema_version", "command", "config_hash", "seed"]);
    let hash = s["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let stamp = format!("maxstab classify-set config_hash={hash} seed=7");

    let csv = fs::read_to_string(dir.join("evidence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# {stamp}"));
    assert_eq!(lines.next().unwrap(), "label,param,n,mean,stderr,ci_lo,ci_hi");
    assert!(lines.next().is_some());

    let charts: Vec<_> = fs::read_dir(dir.join("charts")).unwrap().collect();
    assert!(!charts.is_empty());
    for c in charts {
        let text = fs::read_to_string(c.unwrap().path()).unwrap();
        assert!(text.starts_with(&format!("<!-- {stamp} -->\n<svg")));
    }
}

#[test]
fn reruns_are_byte_stable() {
    let t = TempDir::new().unwrap();
    write(t.path(), "c.toml", OPEN_SET);
    for (out, threads) in [("a", "2"), ("b", "2"), ("s", "1")] {
        let o = run(
            t.path(),
            &["classify-set", "--config", "c.toml", "--seed", "11", "--out", out, "--threads", threads],
        );
        assert_eq!(code(&o), 0);
    }
    let read = |d: &str| fs::read(t.path().join(d).join("evidence.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read("a"), read("s"));
}

#[test]
fn config_hash_tracks_the_seed() {
    let t = TempDir::new().unwrap();
    run(t.path(), &["oracle", "--seed", "1", "--out", "a"]);
    run(t.path(), &["oracle", "--seed", "2", "--out", "b"]);
    let h = |d: &str| summary(&t.path().join(d))["config_hash"].clone();
    assert_ne!(h("a"), h("b"));
}

#[test]
fn unknown_key_is_located() {
    let t = TempDir::new().unwrap();
    write(t.path(), "bad.toml", "[protocol]\nlevel = [8, 9]\n");
    let o = run(t.path(), &["classify-set", "--config", "bad.toml", "--seed", "1", "--out", "x"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml") && err.contains("level"), "{err}");
}

#[test]
fn zero_threads_is_an_error() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&run(t.path(), &["oracle", "--seed", "1", "--threads", "0"])), 1);
}

#[test]
fn failed_certification_exits_one() {
    let t = TempDir::new().unwrap();
    write(
        t.path(),
        "g.toml",
        "[set]\nkind = \"cantor_alpha\"\nwindow = [0.0, 1.0]\nalpha = 2.0\ndepth = 20\ncap = 1e-9\n",
    );
    let o = run(t.path(), &["generate-set", "--config", "g.toml", "--seed", "1", "--out", "g"]);
    assert_eq!(code(&o), 1);
    assert!(summary(&t.path().join("g")).get("certification_failed").is_some());
}

#[test]
fn generated_set_is_saved() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["generate-set", "--seed", "1", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(t.path().join("g/set.toml")).unwrap();
    assert!(text.starts_with("# maxstab generate-set"));
    assert!(text.contains("kind = \"cantor\""));
}

#[test]
fn gap_tail_exits_two() {
    let t = TempDir::new().unwrap();
    write(
        t.path(),
        "g.toml",
        "[set]\nkind = \"sampled_subordinator\"\ndrift = 1.0\nx_min = 1e-6\ncover = 1.0\n\
         [set.tail]\nfamily = \"log_tail\"\ngamma = 3.2\nx0 = 0.04\n",
    );
    let o = run(t.path(), &["generate-set", "--config", "g.toml", "--seed", "1", "--out", "g"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prune_and_report() {
    let t = TempDir::new().unwrap();
    write(
        t.path(),
        "p.toml",
        r#"runs = 2000
[preset]
mode = "theorem_b"
n_max = 20
start_level = 2
[preset.zeta]
family = "power"
coef = 1.0
exponent = 3.0
[[profiles]]
kind = "finite_points"
name = "x"
points = [0.3]
"#,
    );
    let o = run(t.path(), &["prune", "--config", "p.toml", "--seed", "3", "--out", "p"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    write(t.path(), "c.toml", OPEN_SET);
    assert_eq!(code(&run(t.path(), &["classify-set", "--config", "c.toml", "--seed", "7", "--out", "c"])), 0);

    let o = run(t.path(), &["report", "--seed", "1", "--out", "r", "p", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("r/evidence.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("00_p/")));
    assert!(csv.lines().any(|l| l.starts_with("01_c/")));
}

#[test]
fn schema_lists_every_subcommand() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["--schema"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for c in [
        "classify-set",
        "match-prob",
        "verify-formula",
        "oracle",
        "time-change",
        "generate-set",
        "prune",
        "report",
    ] {
        assert!(text.contains(&format!("[{c}]")), "{c}");
    }
}
