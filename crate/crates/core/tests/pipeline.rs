use nanodrop::dynamics::simulate_branches;
use nanodrop::experiments::{run_named, ExperimentConfig};
use nanodrop::interference::{numeric_phase, GravityModel};
use nanodrop::model::load_scenario_with_overrides;
use nanodrop::schedule::{schedule_for, PulseSchedule};
use nanodrop::Scenario;

#[test]
fn scenario_file_to_phase() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, r#"{ "frame": { "phi": 1e-4 } }"#).unwrap();
    let s = load_scenario_with_overrides(&path, &[("geometry.gradientMagnitude".into(), "1880".into())]).unwrap();
    assert_eq!(s.frame.phi, 1e-4);

    // the schedule survives a CSV round trip unchanged in its times
    let sched = schedule_for(&s).unwrap();
    let mut buf = Vec::new();
    sched.write_csv(&mut buf).unwrap();
    let back = PulseSchedule::read_csv(&buf[..], sched.kinematics, sched.geometry, sched.period).unwrap();
    let times = |p: &PulseSchedule| p.events().iter().map(|e| e.time).collect::<Vec<_>>();
    assert_eq!(times(&back), times(&sched));

    let a = simulate_branches(&s, &sched).unwrap();
    let b = simulate_branches(&s, &back).unwrap();
    assert_eq!(a.samples, b.samples);
    assert!(a.recombined());

    // s ∝ 1/B′: doubling the gradient halves the separation
    let base = Scenario { frame: s.frame, ..Scenario::paper_2022() };
    let wide = simulate_branches(&base, &schedule_for(&base).unwrap()).unwrap();
    let ratio = a.max_separation().1 / wide.max_separation().1;
    assert!((ratio - 0.5).abs() < 1e-6, "{ratio}");

    let phase = numeric_phase(&a, &s, &GravityModel::from_scenario(&s).unwrap()).unwrap();
    assert!(phase.delta_phi.is_finite());
}

#[test]
fn invalid_scenario_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "diamond": { "susceptibility": 1e-5 } }"#).unwrap();
    assert!(load_scenario_with_overrides(&path, &[]).is_err());
}

#[test]
fn replication_report_lands_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_named("replication", &Scenario::paper_2022(), &ExperimentConfig::default()).unwrap();
    report.write_to(dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert_eq!(json, report.to_json().unwrap());
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["provenance"]["scenarioSha256"].as_str().unwrap().len(), 64);
    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert!(rows.starts_with("index,label,"));
    assert!(run_named("nope", &Scenario::paper_2022(), &ExperimentConfig::default()).is_err());
}
