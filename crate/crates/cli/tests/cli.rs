use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nanodrop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanodrop"))
        .args(args)
        .env_remove("NANODROP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nanodrop(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn table_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            let mut it = l.split(',');
            (it.next() == Some(key)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&["--help"]);
    for sub in ["params", "schedule", "simulate", "fringe", "experiment", "fieldmap"] {
        assert!(help.contains(sub), "{sub}");
    }
    for flag in ["--config", "--set", "--format", "--out", "--verbose"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert_eq!(code(&nanodrop(&["frobnicate"])), 2);
}

#[test]
fn params_table_and_inverse_gradient_scaling() {
    let t = ok(&["params"]);
    let s = table_value(&t, "s");
    assert!((s - 276e-9).abs() < 1e-9, "{s}");
    assert!((table_value(&t, "frequency") - 10.56).abs() < 0.01);
    assert!(table_value(&t, "T") > 0.09);
    assert!(table_value(&t, "delta_x_eq") > 0.0);

    let doubled = table_value(&ok(&["params", "--set", "geometry.gradientMagnitude=1880"]), "s");
    assert!((doubled - 138e-9).abs() < 1e-9, "{doubled}");

    let json: serde_json::Value = serde_json::from_str(&ok(&["params", "--format", "json"])).unwrap();
    assert!(json["maxSeparation"].as_f64().unwrap() > 2.7e-7);
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"diamond": {"susceptibility": 2e-5}}"#).unwrap();
    let out = nanodrop(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("susceptibility must be negative"));

    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&nanodrop(&["params", "--config", bad.to_str().unwrap()])), 2);
    fs::write(&bad, r#"{"geometry": {"toothWidthh": 1e-4}}"#).unwrap();
    assert_eq!(code(&nanodrop(&["params", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&nanodrop(&["params", "--set", "noequals"])), 2);
}

#[test]
fn schedule_rows_and_first_tooth_shift() {
    let rows = csv_rows(&ok(&["schedule"]));
    assert!((rows.len() as f64 - 9800.0).abs() / 9800.0 < 0.02, "{}", rows.len());
    assert_eq!(rows[0][2], "PI_HALF_OPEN");
    assert_eq!(rows.last().unwrap()[2], "PI_HALF_CLOSE");

    let full = csv_rows(&ok(&["schedule", "--first-tooth-fraction", "1.0"]));
    let t_half: f64 = rows[1][1].parse().unwrap();
    let t_full: f64 = full[1][1].parse().unwrap();
    // oracle: free fall from rest over 1.27 m, then the crossing times of
    // z = w/2 and z = w
    let v0 = (2.0 * 9.81 * 1.27f64).sqrt();
    let t_at = |z: f64| (-v0 + (v0 * v0 + 2.0 * 9.81 * z).sqrt()) / 9.81;
    let w = 115e-6;
    assert!((t_half - t_at(w / 2.0)).abs() < 1e-12);
    assert!(((t_full - t_half) - (t_at(w) - t_at(w / 2.0))).abs() < 1e-12);
}

#[test]
fn jittered_schedule_is_reproducible() {
    let a = ok(&["schedule", "--jitter", "1e-9", "--seed", "7"]);
    let b = ok(&["schedule", "--jitter", "1e-9", "--seed", "7"]);
    let c = ok(&["schedule", "--jitter", "1e-9", "--seed", "8"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, ok(&["schedule"]));
}

fn max_abs_column(path: &Path, col: usize) -> f64 {
    csv_rows(&fs::read_to_string(path).unwrap()).iter().map(|r| r[col].parse::<f64>().unwrap().abs()).fold(0.0, f64::max)
}

#[test]
fn simulate_writes_trajectory_and_oracle_summary() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    let stdout = ok(&["simulate", "--out", traj.to_str().unwrap(), "--oracle"]);
    let text = fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t_s,xA_m,vA_ms,spinA,xB_m,vB_ms,spinB,dx_m,common_m\n"));
    let dx = max_abs_column(&traj, 7);
    assert!((dx - 2.76e-7).abs() / 2.76e-7 < 0.02, "{dx}");
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(summary["oracleDeviation"].as_f64().unwrap() < 1e-11);

    let full = dir.path().join("full.csv");
    ok(&["simulate", "--out", full.to_str().unwrap(), "--first-tooth-fraction", "1.0"]);
    let (half_peak, full_peak) = (max_abs_column(&traj, 8), max_abs_column(&full, 8));
    assert!(full_peak >= 10.0 * half_peak, "{half_peak} {full_peak}");
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nanodrop"))
        .arg("params")
        .env("NANODROP_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(dir.path().join("params.csv")).unwrap().contains("omega"));
}

#[test]
fn fringe_scans() {
    let rows = csv_rows(&ok(&["fringe", "--phi-min", "-5e-4", "--phi-max", "5e-4", "--points", "201"]));
    assert_eq!(rows.len(), 201);
    let pa: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(pa[100], 1.0);
    // null, peak, null: one full fringe across the window
    assert!(pa[0] < 0.05 && pa[200] < 0.05, "{} {}", pa[0], pa[200]);
    assert!(pa[..100].windows(2).all(|w| w[1] >= w[0]));

    let single = csv_rows(&ok(&["fringe", "--phi-min", "0", "--phi-max", "0", "--points", "1"]));
    assert_eq!(single.len(), 1);
    assert_eq!(single[0][2].parse::<f64>().unwrap(), 1.0);

    let a = csv_rows(&ok(&["fringe", "--points", "11", "--mode", "analytic"]));
    let n = csv_rows(&ok(&["fringe", "--points", "11", "--mode", "numeric"]));
    for (p, q) in a.iter().zip(&n) {
        let (x, y): (f64, f64) = (p[2].parse().unwrap(), q[2].parse().unwrap());
        assert!((x - y).abs() < 0.01);
    }
    assert_eq!(code(&nanodrop(&["fringe", "--phi-min", "-2e-3"])), 2);
}

#[test]
fn fringe_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("f.svg");
    ok(&["fringe", "--points", "21", "--svg", svg.to_str().unwrap()]);
    assert!(fs::read_to_string(svg).unwrap().contains("<polyline"));
}

#[test]
fn experiments() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("rep");
    let stdout = ok(&["experiment", "replication", "--out", rep.to_str().unwrap()]);
    assert!(stdout.contains("maxSeparation"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("summary.json")).unwrap()).unwrap();
    let h = &summary["headline"];
    assert!((h["maxSeparation"].as_f64().unwrap() - 276e-9).abs() / 276e-9 < 0.02);
    assert!(h["analyticDeviation"].as_f64().unwrap() < 1e-10);
    assert!((h["crossingCount"].as_f64().unwrap() - 9800.0).abs() / 9800.0 < 0.02);
    assert_eq!(summary["provenance"]["scenarioSha256"].as_str().unwrap().len(), 64);

    let jit = dir.path().join("jit");
    ok(&["experiment", "jitter", "--trials", "3", "--sigmas", "0,1e-10,1e-9,1e-8", "--out", jit.to_str().unwrap()]);
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(jit.join("summary.json")).unwrap()).unwrap();
    let dx: Vec<f64> = rows["rows"].as_array().unwrap().iter().map(|r| r["values"]["maxResidualDx"].as_f64().unwrap()).collect();
    assert!(dx.windows(2).all(|w| w[1] >= w[0]), "{dx:?}");

    let out = nanodrop(&["experiment", "bogus"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("replication") && err.contains("sweep"), "{err}");
}

#[test]
fn sweep_summary_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = (0..20).map(|i| format!("{:e}", -5e-4 + i as f64 * 5e-5)).collect();
    let values = values.join(",");
    let run = |workers: &str, name: &str| {
        let d = dir.path().join(name);
        ok(&["experiment", "sweep", "--param", "frame.phi", "--values", &values, "--workers", workers, "--out", d.to_str().unwrap()]);
        fs::read(d.join("summary.json")).unwrap()
    };
    assert_eq!(run("1", "one"), run("4", "four"));
    assert!(dir.path().join("one").join("point_0019.csv").exists());
}

#[test]
fn sweep_failures_exit_nonzero_but_write_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("s");
    let out = nanodrop(&["experiment", "sweep", "--param", "diamond.susceptibility", "--values", "-2.2e-5,1e-5", "--out", d.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(d.join("summary.json").exists());
}

fn write_map(path: &Path, f: impl Fn(f64) -> f64) {
    let w = 115e-6;
    let mut text = String::from("z_m,dBx_dx_T_per_m\n");
    for i in 0..4000 {
        let z = i as f64 * w / 200.0 + w / 400.0;
        text.push_str(&format!("{z:e},{:e}\n", f(z)));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn fieldmap_fits() {
    let dir = tempfile::tempdir().unwrap();
    let w = 115e-6;
    let square = dir.path().join("sq.csv");
    write_map(&square, |z| if ((z / w).floor() as i64) % 2 == 0 { 940.0 } else { -940.0 });
    let json: serde_json::Value = serde_json::from_str(&ok(&["fieldmap", square.to_str().unwrap(), "--fit", "--format", "json"])).unwrap();
    let pitch = json["fit"]["fittedPitch"].as_f64().unwrap();
    assert!((pitch - w).abs() < 1e-9, "{pitch}");

    let sine = dir.path().join("sin.csv");
    write_map(&sine, |z| 1477.0 * (PI * z / w).sin());
    let json: serde_json::Value = serde_json::from_str(&ok(&["fieldmap", sine.to_str().unwrap(), "--fit", "--format", "json"])).unwrap();
    let avg = json["fit"]["avgGradientMagnitude"].as_f64().unwrap();
    let oracle = 1477.0 * 2.0 / PI;
    assert!((avg - oracle).abs() / oracle < 2e-3, "{avg} vs {oracle}");
    assert!((avg - 940.0).abs() < 1.0);

    let out = nanodrop(&["fieldmap", sine.to_str().unwrap(), "--dbx-col", "Gx"]);
    assert_eq!(code(&out), 2);
}
