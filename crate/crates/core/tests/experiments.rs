use stresspop_core::experiments::{
    render_csv, run_sweep, verify_suite, write_outputs, Axis, AxisName, CellValue, ExperimentConfig, ExperimentError, Level,
    RunStatus, Spacing, VerifyOptions,
};
use stresspop_core::{growth_sensitivity, reference_params, solve_extinction};

const MODEL: &str = r#"{
    "beta0": {"kind": "gamma", "shape": 3, "rate": 1},
    "beta1": {"kind": "gamma", "shape": 3, "rate": 0.1},
    "q": 0.4, "gamma": 0.3,
    "stress": {"kind": "constant", "p": 0.6}
}"#;

fn config(sweep: &str, method: &str) -> ExperimentConfig {
    let sweep = if sweep.is_empty() { String::new() } else { format!(r#""sweep": {{"axes": {sweep}}},"#) };
    let text = format!(r#"{{"name": "t", "model": {MODEL}, {sweep} "method": {method}, "seed": 5}}"#);
    ExperimentConfig::from_json(&text).unwrap()
}

fn float(v: CellValue) -> f64 {
    match v {
        CellValue::Float(x) => x,
        other => panic!("not a float: {other:?}"),
    }
}

#[test]
fn single_point_matches_direct_call() {
    let cfg = config("", r#"{"kind": "extinction"}"#);
    let r = run_sweep(&cfg, 5).unwrap();
    assert_eq!(r.rows.len(), 1);
    let s = solve_extinction(&reference_params(0.6, 0.4, 0.3).unwrap()).unwrap();
    assert_eq!(float(r.column("pi0").unwrap()[0]), s.pi0);
    assert_eq!(float(r.column("pi1").unwrap()[0]), s.pi1);
    assert_eq!(r.column("survives").unwrap()[0], CellValue::Bool(true));

    let cfg = config("", r#"{"kind": "growth"}"#);
    let r = run_sweep(&cfg, 5).unwrap();
    let g = growth_sensitivity(&reference_params(0.6, 0.4, 0.3).unwrap()).unwrap();
    assert_eq!(float(r.column("lambda").unwrap()[0]), g.lambda);
    assert_eq!(float(r.column("dlambda_dgamma").unwrap()[0]), g.dlambda_dgamma);
}

#[test]
fn rows_are_row_major_over_declared_axes() {
    let axes = r#"[{"name": "p", "values": [0.2, 0.7]}, {"name": "q", "start": 0.1, "stop": 0.5, "count": 3},
                  {"name": "gamma", "values": [0.25, 0.75]}]"#;
    let cfg = config(axes, r#"{"kind": "extinction"}"#);
    let r = run_sweep(&cfg, 5).unwrap();
    assert_eq!(r.axis_names, ["p", "q", "gamma"]);
    assert_eq!(r.rows.len(), 2 * 3 * 2);
    let mut k = 0;
    for p in [0.2, 0.7] {
        for q in [0.1, 0.3, 0.5] {
            for g in [0.25, 0.75] {
                let row = &r.rows[k];
                assert_eq!(row.axis_values[0], p);
                assert!((row.axis_values[1] - q).abs() < 1e-15);
                assert_eq!(row.axis_values[2], g);
                let s = solve_extinction(&reference_params(p, row.axis_values[1], g).unwrap()).unwrap();
                assert_eq!(float(row.values[0]), s.pi0);
                k += 1;
            }
        }
    }
}

#[test]
fn axis_points() {
    let ax = Axis { name: AxisName::Period, values: None, start: Some(0.1), stop: Some(100.0), count: Some(4), spacing: Spacing::Log };
    let pts = ax.points().unwrap();
    for (got, want) in pts.iter().zip([0.1, 1.0, 10.0, 100.0]) {
        assert!((got / want - 1.0).abs() < 1e-12);
    }
    let bad = Axis { start: Some(-1.0), ..ax.clone() };
    assert!(bad.points().is_err());
    let both = Axis { values: Some(vec![1.0]), ..ax };
    assert!(both.points().is_err());
}

#[test]
fn invalid_configs_are_config_errors() {
    let cases = [
        // Both switching parameters.
        r#"{"model": {"beta0": {"kind": "constant", "rate": 1}, "beta1": {"kind": "constant", "rate": 0.1},
            "q": 0.3, "alpha": 0.2, "gamma": 0.5, "stress": {"kind": "constant", "p": 0.3}}, "method": {"kind": "growth"}}"#
            .to_string(),
        format!(r#"{{"model": {MODEL}, "sweep": {{"axes": [{{"name": "q", "values": [0.1]}}, {{"name": "alpha", "values": [0.1]}}]}}, "method": {{"kind": "growth"}}}}"#),
        format!(r#"{{"model": {MODEL}, "sweep": {{"axes": [{{"name": "q", "values": [0.1]}}, {{"name": "q", "values": [0.2]}}]}}, "method": {{"kind": "growth"}}}}"#),
        format!(r#"{{"model": {MODEL}, "sweep": {{"axes": [{{"name": "T", "values": [1.0]}}]}}, "method": {{"kind": "floquet"}}}}"#),
        format!(r#"{{"model": {MODEL}, "method": {{"kind": "bogus"}}}}"#),
        format!(r#"{{"model": {MODEL}, "method": {{"kind": "growth"}}, "extra": 1}}"#),
        format!(r#"{{"model": {MODEL}, "method": {{"kind": "simulate", "replicates": 0}}}}"#),
        format!(r#"{{"name": "a/b", "model": {MODEL}, "method": {{"kind": "growth"}}}}"#),
        r#"{"model": {"beta0": {"kind": "gamma", "shape": 0.5, "rate": 1}, "beta1": {"kind": "constant", "rate": 0.1},
            "q": 0.3, "gamma": 0.5, "stress": {"kind": "constant", "p": 0.3}}, "method": {"kind": "growth"}}"#
            .to_string(),
        "not json".to_string(),
    ];
    for text in &cases {
        match ExperimentConfig::from_json(text) {
            Err(e @ ExperimentError::Config(_)) => assert_eq!(e.exit_code(), 1),
            other => panic!("accepted {text}: {other:?}"),
        }
    }
}

#[test]
fn failed_cells_are_reported_per_row() {
    // Deep in the extinction region there is no growth root above the floor.
    let axes = r#"[{"name": "p", "values": [0.3, 1.0]}, {"name": "q", "values": [0.0]}, {"name": "gamma", "values": [0.95]}]"#;
    let cfg = config(axes, r#"{"kind": "growth"}"#);
    let r = run_sweep(&cfg, 5).unwrap();
    assert!(r.rows[0].error.is_none());
    assert!(r.rows[1].error.is_some());
    assert!(r.rows[1].values.iter().all(|v| *v == CellValue::Empty));
    assert_eq!(r.failures(), 1);
    let csv = render_csv(&r).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.ends_with(",error"));
}

#[test]
fn sweeps_are_deterministic_across_runs_and_workers() {
    let axes = r#"[{"name": "gamma", "values": [0.2, 0.5]}]"#;
    let cfg = config(axes, r#"{"kind": "simulate", "mode": "extinction", "replicates": 200}"#);
    let a = render_csv(&run_sweep(&cfg, 5).unwrap()).unwrap();
    let b = render_csv(&run_sweep(&cfg, 5).unwrap()).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| render_csv(&run_sweep(&cfg, 5).unwrap()).unwrap());
    assert_eq!(a, c);
    let d = render_csv(&run_sweep(&cfg, 6).unwrap()).unwrap();
    assert_ne!(a, d);
    assert!(a.contains("# seed 5"));
}

#[test]
fn outputs_resume_and_refuse() {
    let dir = tempfile::tempdir().unwrap();
    let axes = r#"[{"name": "gamma", "values": [0.2, 0.5, 0.8]}]"#;
    let cfg = config(axes, r#"{"kind": "extinction"}"#);
    let (status, result) = write_outputs(&cfg, 5, dir.path(), false).unwrap();
    let main = dir.path().join("t.csv");
    assert_eq!(status, RunStatus::Written(main.clone()));
    assert_eq!(result.unwrap().rows.len(), 3);
    assert!(dir.path().join("t_plot.py").exists());
    assert!(dir.path().join("t.provenance.json").exists());
    let first = std::fs::read_to_string(&main).unwrap();

    let (status, result) = write_outputs(&cfg, 5, dir.path(), false).unwrap();
    assert_eq!(status, RunStatus::Skipped(main.clone()));
    assert!(result.is_none());

    let err = write_outputs(&cfg, 6, dir.path(), false).unwrap_err();
    assert!(matches!(err, ExperimentError::Conflict { .. }));
    assert_eq!(err.exit_code(), 1);
    assert_eq!(std::fs::read_to_string(&main).unwrap(), first);

    // Truncated output is refused, then replaced with force.
    let cut: String = first.lines().take(first.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    std::fs::write(&main, cut).unwrap();
    let err = write_outputs(&cfg, 5, dir.path(), false).unwrap_err();
    assert!(err.to_string().contains("incomplete"), "{err}");
    let (status, _) = write_outputs(&cfg, 5, dir.path(), true).unwrap();
    assert_eq!(status, RunStatus::Written(main.clone()));
    assert_eq!(std::fs::read_to_string(&main).unwrap(), first);
}

#[test]
fn config_hash_tracks_content_and_seed() {
    let a = config("", r#"{"kind": "extinction"}"#);
    let b = config("", r#"{"kind": "extinction", "time_steps": 300}"#);
    assert_eq!(a.hash(1), a.hash(1));
    assert_ne!(a.hash(1), a.hash(2));
    assert_ne!(a.hash(1), b.hash(1));
    assert_eq!(a.effective_seed(None), 5);
    assert_eq!(a.effective_seed(Some(9)), 9);
}

#[test]
fn verify_detects_a_perturbed_criterion() {
    let opts = VerifyOptions { perturb_gamma: 0.05, ..VerifyOptions::new(Level::Quick) };
    let report = verify_suite(&opts);
    assert!(!report.passed);
    let bad: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    assert_eq!(bad, ["survival_equivalence"]);
}
