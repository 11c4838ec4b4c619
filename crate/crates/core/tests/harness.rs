use envpoison::harness::*;
use envpoison::learners::LearnerKind;
use envpoison::Error;

fn spec(json: &str, dir: &std::path::Path) -> ExperimentSpec {
    let mut spec: ExperimentSpec = serde_json::from_str(json).unwrap();
    spec.output_dir = dir.to_path_buf();
    spec
}

fn body(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn offline_sweep_is_reproducible() {
    let json = r#"{"env": {"kind": "chain", "gamma": 0.99},
        "attacks": ["rattack", "jattack", "nt_jattack"],
        "sweep": {"axis": "epsilon", "range": {"start": 0.0, "stop": 1.0, "num": 6}}}"#;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&spec(json, a.path())).unwrap();
    run_experiment(&spec(json, b.path())).unwrap();
    assert_eq!(body(&a.path().join(OFFLINE_CSV)), body(&b.path().join(OFFLINE_CSV)));
    assert_eq!(ra.offline.len(), 18);
    assert!(!ra.infeasible_only());
    for point in ra.offline.chunks(3) {
        let (r, j, nt) = (point[0].cost, point[1].cost, point[2].cost);
        assert!(j <= r.min(nt) + 1e-6);
    }
}

#[test]
fn reward_sweep_on_navigation() {
    let json = r#"{"env": {"kind": "navigation"}, "attacks": ["rattack", "none"],
        "sweep": {"axis": "reward_s0", "range": [-1.0, 0.0, 1.0]}}"#;
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec(json, dir.path())).unwrap();
    let text = body(&dir.path().join(OFFLINE_CSV));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sweep_value,attack,feasible,cost");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("-1,RAttack,true,"));
    assert!(report.offline.iter().filter(|r| r.attack == AttackKind::RAttack).all(|r| r.feasible));
}

#[test]
fn empty_attack_list_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec(r#"{"env": {"kind": "chain"}}"#, dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join(OFFLINE_CSV)).unwrap();
    assert!(text.starts_with("# envpoison "));
    assert_eq!(body(&dir.path().join(OFFLINE_CSV)), "sweep_value,attack,feasible,cost");
}

#[test]
fn infeasible_only_report() {
    let json = r#"{"env": {"kind": "chain", "gamma": 0.99}, "attacks": ["dattack"],
        "attack_config": {"epsilon": 0.9}}"#;
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment(&spec(json, dir.path())).unwrap().infeasible_only());
}

#[test]
fn online_batch_outputs() {
    let json = r#"{"env": {"kind": "chain"},
        "online": {"learner": {"kind": "ucrl"}, "horizon": 5000, "runs": 3, "seed": 4}}"#;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = run_experiment(&spec(json, a.path())).unwrap();
    run_experiment(&spec(json, b.path())).unwrap();
    assert_eq!(body(&a.path().join(ONLINE_CSV)), body(&b.path().join(ONLINE_CSV)));
    let online = report.online.unwrap();
    assert_eq!(online.seeds, vec![4, 5, 6]);
    assert_eq!(online.learner, LearnerKind::ucrl());
    assert!(online.attack_feasible);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join(ONLINE_JSON)).unwrap()).unwrap();
    assert_eq!(summary["points"].as_array().unwrap().last().unwrap()["t"], 5000);
    // Online-only specs skip the offline file.
    assert!(!a.path().join(OFFLINE_CSV).exists());
}

#[test]
fn configuration_errors_precede_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for json in [
        r#"{"env": {"kind": "chain"}, "online": {"learner": {"kind": "qlearn"}, "horizon": 10, "runs": 1}}"#,
        r#"{"env": {"kind": "chain", "gamma": 0.99}, "online": {"learner": {"kind": "ucrl"}, "horizon": 10, "runs": 1}}"#,
        r#"{"env": {"kind": "chain"}, "attacks": ["rattack"], "attack_config": {"p_norm": 3}}"#,
        r#"{"env": {"kind": "chain"}, "sweep": {"axis": "epsilon", "range": {"start": 0, "stop": 1, "num": 0}}}"#,
        r#"{"env": {"kind": "chain"}, "target": [0, 1]}"#,
    ] {
        let err = run_experiment(&spec(json, &out)).unwrap_err();
        assert!(
            matches!(err, Error::Configuration(_) | Error::InvalidPolicy(_) | Error::InvalidConfig(_)),
            "{json}: {err}"
        );
        assert!(!out.exists());
    }
}
