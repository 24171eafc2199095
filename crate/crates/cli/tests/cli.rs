use std::path::Path;
use std::process::{Command, Output};

fn stresspop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stresspop"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, p: f64, gamma: f64, method: &str) -> String {
    let text = format!(
        r#"{{
  "name": "{name}",
  "model": {{
    "beta0": {{"kind": "gamma", "shape": 3, "rate": 1}},
    "beta1": {{"kind": "gamma", "shape": 3, "rate": 0.1}},
    "q": 0.0, "gamma": {gamma},
    "stress": {{"kind": "constant", "p": {p}}}
  }},
  "sweep": {{"axes": [{{"name": "q", "values": [0.0, 0.2, 0.4]}}]}},
  "method": {method},
  "seed": 3
}}"#
    );
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stresspop(&["--help"], dir.path())), 0);
    assert_eq!(code(&stresspop(&["--version"], dir.path())), 0);
    assert_eq!(code(&stresspop(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&stresspop(&["growth"], dir.path())), 1);
    let o = stresspop(&["growth", "--config", "missing.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    std::fs::write(dir.path().join("bad.json"), "{\"model\": 3}").unwrap();
    assert_eq!(code(&stresspop(&["sweep", "--config", "bad.json"], dir.path())), 1);
}

#[test]
fn run_skip_conflict_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ext", 0.6, 0.3, r#"{"kind": "extinction"}"#);
    let o = stresspop(&["extinction", "--config", &cfg, "--out", "res"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("res/ext.csv");
    let first = std::fs::read_to_string(&csv).unwrap();
    assert!(first.contains("# seed 3"));
    assert_eq!(first.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let o = stresspop(&["extinction", "--config", &cfg, "--out", "res"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("skipped"));

    let o = stresspop(&["extinction", "--config", &cfg, "--out", "res", "--seed", "4"], dir.path());
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), first);

    let o = stresspop(&["extinction", "--config", &cfg, "--out", "res", "--seed", "4", "--force"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(&csv).unwrap().contains("# seed 4"));
}

#[test]
fn subcommand_overrides_config_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "base", 0.4, 0.5, r#"{"kind": "extinction"}"#);
    let o = stresspop(&["growth", "--config", &cfg, "--out", "."], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("base_growth.csv")).unwrap();
    assert!(text.contains("# method growth"));
    assert!(text.lines().any(|l| l.starts_with("q,lambda")));
}

#[test]
fn all_cells_failing_is_a_compute_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dead", 1.0, 0.95, r#"{"kind": "growth"}"#);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[0.0, 0.2, 0.4]", "[0.0]");
    std::fs::write(&cfg, text).unwrap();
    let o = stresspop(&["sweep", "--config", &cfg, "--out", "."], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulation_output_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mc", 0.6, 0.3, r#"{"kind": "simulate", "mode": "extinction", "replicates": 300}"#);
    let a = stresspop(&["simulate", "--config", &cfg, "--out", "a", "--workers", "1"], dir.path());
    let b = stresspop(&["simulate", "--config", &cfg, "--out", "b", "--workers", "3"], dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    let ra = std::fs::read(dir.path().join("a/mc.csv")).unwrap();
    let rb = std::fs::read(dir.path().join("b/mc.csv")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(code(&stresspop(&["simulate", "--config", &cfg, "--workers", "0"], dir.path())), 1);
}

#[test]
fn verify_reports_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let o = stresspop(&["verify", "--out", "good"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    let report = std::fs::read_to_string(dir.path().join("good/verify_report.json")).unwrap();
    assert!(report.contains("\"passed\": true"));
    assert!(dir.path().join("good/verify_timings.json").exists());

    let o = stresspop(&["verify", "--out", "bad", "--perturb-gamma", "0.05"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL survival_equivalence"));
}
