use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pumpnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pumpnet")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RING: &str = r#"{
  "users": [
    {"user": "A", "channel": "C34"},
    {"user": "B", "channel": "C38"},
    {"user": "C", "channel": "C42"},
    {"user": "D", "channel": "C46"}
  ],
  "target": [["A", "B"], ["B", "C"], ["C", "D"], ["A", "D"]]
}"#;

const K10: &str = r#"{"users": ["U1","U2","U3","U4","U5","U6","U7","U8","U9","U10"], "target": "complete"}"#;

fn plan_k10(dir: &Path) -> PathBuf {
    let problem = write(dir, "k10.json", K10);
    let out = dir.join("plan");
    let o = pumpnet(&["plan", s(&problem), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("plan.json")
}

#[test]
fn ring_plans_one_configuration() {
    let dir = TempDir::new().unwrap();
    let problem = write(dir.path(), "ring.json", RING);
    let out = dir.path().join("out");
    let o = pumpnet(&["plan", s(&problem), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = read_json(&out.join("plan.json"));
    let schedule = doc["plan"]["schedule"].as_array().unwrap();
    assert_eq!(schedule.len(), 1);
    assert!(out.join("accumulated.dot").exists());
    let dots = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "dot"));
    assert_eq!(dots.count(), 2);
}

#[test]
fn k10_plans_at_most_four_configurations() {
    let dir = TempDir::new().unwrap();
    let plan = plan_k10(dir.path());
    let doc = read_json(&plan);
    let n = doc["plan"]["schedule"].as_array().unwrap().len();
    assert!((2..=4).contains(&n), "{n} configurations");
    assert_eq!(doc["plan"]["alloc"].as_array().unwrap().len(), 10);
}

#[test]
fn impossible_problem_exits_2_with_stuck_edges() {
    let dir = TempDir::new().unwrap();
    let problem = write(
        dir.path(),
        "tight.json",
        r#"{"users": [{"user": "A", "channel": "C39"}, {"user": "B", "channel": "C41"}],
            "target": "complete", "grid": {"min_index": 38, "max_index": 42}}"#,
    );
    let o = pumpnet(&["plan", s(&problem), "-o", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("A-B"), "{err}");
    assert!(err.contains("GuardConflict"), "{err}");
    assert!(!dir.path().join("out").join("plan.json").exists());
}

#[test]
fn malformed_input_exits_1_with_location() {
    let dir = TempDir::new().unwrap();
    let problem = write(dir.path(), "bad.json", "{\n  \"users\": [\"A\", \"B\"],\n  \"target\": \n}");
    let o = pumpnet(&["plan", s(&problem)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("bad.json") && err.contains("line 4"), "{err}");

    let unknown = write(dir.path(), "unknown.json", r#"{"users": ["A", "B"], "target": "complete", "pumps": 3}"#);
    assert_eq!(code(&pumpnet(&["plan", s(&unknown)])), 1);
    assert_eq!(code(&pumpnet(&["jsi", "--pumps", "C0x"])), 1);
}

#[test]
fn jsi_line_counts() {
    let dir = TempDir::new().unwrap();
    for (pumps, lines) in [("C40", 1), ("C39,C41", 3), ("C38,C40,C43", 6)] {
        let out = dir.path().join(pumps.replace(',', "_"));
        let o = pumpnet(&["jsi", "--pumps", pumps, "-o", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let side = read_json(&out.join("jsi.json"));
        assert_eq!(side["distinct_sums"].as_array().unwrap().len(), lines, "{pumps}");
        assert_eq!(side["lines"].as_array().unwrap().len(), lines, "{pumps}");
        let csv = fs::read_to_string(out.join("jsi.csv")).unwrap();
        assert!(csv.lines().count() > 1);
    }
    let side = read_json(&dir.path().join("C39_C41").join("jsi.json"));
    let forbidden = side["forbidden"].to_string();
    for c in ["C37", "C39", "C41", "C43"] {
        assert!(forbidden.contains(c), "{forbidden}");
    }
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = TempDir::new().unwrap();
    let o = pumpnet(&["jsi", "--pumps", "C40", "--mode", "montecarlo", "-o", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
    let plan = plan_k10(dir.path());
    let o = pumpnet(&["network", s(&plan), "--mode", "montecarlo", "-o", s(&dir.path().join("n"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn outputs_need_force_to_overwrite() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let args = ["jsi", "--pumps", "C40", "-o", s(&out)];
    assert_eq!(code(&pumpnet(&args)), 0);
    let before = fs::read(out.join("jsi.csv")).unwrap();
    let o = pumpnet(&args);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = pumpnet(&["jsi", "--pumps", "C40", "--integration", "2", "-o", s(&out), "--force"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(out.join("jsi.csv")).unwrap(), before);
}

#[test]
fn network_analytic_k10_all_links_positive() {
    let dir = TempDir::new().unwrap();
    let plan = plan_k10(dir.path());
    let out = dir.path().join("net");
    let o = pumpnet(&["network", s(&plan), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&out.join("skr_report.json"));
    assert_eq!(report["skr"]["summary"]["links"], 45);
    assert_eq!(report["skr"]["summary"]["positive_links"], 45);
    let csv = fs::read_to_string(out.join("skr_matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("user,U1,"));
}

#[test]
fn network_monte_carlo_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let plan = plan_k10(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = pumpnet(&["network", s(&plan), "--mode", "montecarlo", "--seed", seed, "--duration", "2", "-o", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (fs::read(out.join("skr_report.json")).unwrap(), fs::read(out.join("skr_matrix.csv")).unwrap())
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn network_monte_carlo_tracks_analytic() {
    let dir = TempDir::new().unwrap();
    let plan = plan_k10(dir.path());
    let analytic = dir.path().join("an");
    let mc = dir.path().join("mc");
    assert_eq!(code(&pumpnet(&["network", s(&plan), "--duration", "60", "-o", s(&analytic)])), 0);
    let o = pumpnet(&["network", s(&plan), "--mode", "montecarlo", "--seed", "11", "--duration", "60", "-o", s(&mc)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, m) = (read_json(&analytic.join("skr_report.json")), read_json(&mc.join("skr_report.json")));
    for (ca, cm) in a["configs"].as_array().unwrap().iter().zip(m["configs"].as_array().unwrap()) {
        for (la, lm) in ca["links"].as_array().unwrap().iter().zip(cm["links"].as_array().unwrap()) {
            let expect = la["stats"]["coincidence_rate"].as_f64().unwrap();
            let ac = la["stats"]["accidental_rate"].as_f64().unwrap();
            let got = lm["stats"]["coincidence_rate"].as_f64().unwrap();
            let sigma = ((expect + 2.0 * ac) / 60.0).sqrt();
            assert!((got - expect).abs() <= 4.0 * sigma, "{}: {got} vs {expect}", la["users"]);
        }
    }
    let mean = |v: &Value| v["skr"]["summary"]["mean_overall_skr"].as_f64().unwrap();
    assert!((mean(&m) / mean(&a) - 1.0).abs() < 0.03, "{} vs {}", mean(&m), mean(&a));
}

#[test]
fn verify_accepts_plans_and_rejects_tampering() {
    let dir = TempDir::new().unwrap();
    let plan = plan_k10(dir.path());
    let o = pumpnet(&["verify", s(&plan), "-o", s(&dir.path().join("v"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_json(&dir.path().join("v").join("verify.json"))["passed"], true);

    let mut doc = read_json(&plan);
    doc["plan"]["schedule"].as_array_mut().unwrap().pop();
    let broken = write(dir.path(), "broken.json", &doc.to_string());
    let o = pumpnet(&["verify", s(&broken), "-o", s(&dir.path().join("w"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(read_json(&dir.path().join("w").join("verify.json"))["passed"], false);
    let o = pumpnet(&["network", s(&broken), "-o", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("x").join("skr_report.json").exists());
}

#[test]
fn calibrate_reproduces_shipped_defaults() {
    let dir = TempDir::new().unwrap();
    let o = pumpnet(&["calibrate", "-o", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fresh = read_json(&dir.path().join("defaults.json"));
    let shipped: Value =
        serde_json::from_str(include_str!("../../core/data/defaults.json")).unwrap();
    assert_eq!(fresh, shipped);

    let defaults = dir.path().join("defaults.json");
    let plan = plan_k10(dir.path());
    let o = pumpnet(&["--defaults", s(&defaults), "network", s(&plan), "-o", s(&dir.path().join("n"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
