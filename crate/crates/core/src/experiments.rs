//! Named, reproducible experiment recipes: the replication suite, timing
//! jitter and magnet drift studies, and a generic parameter sweep.
//!
//! Every report is ordered by point index and carries no timings or thread
//! counts, so its JSON is byte-identical for a given configuration, seed
//! and crate version.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{integrate_reference, separation_deviation, simulate_branches, SimulationResult};
use crate::error::{Error, Result};
use crate::interference::{analytic_phases, fringe_period, numeric_phase, GravityModel, Oscillations, PhaseMode};
use crate::model::{derive_quantities, Scenario};
use crate::schedule::{apply_jitter, schedule_for, PulseSchedule};

pub const EXPERIMENTS: [&str; 4] = ["replication", "jitter", "drift", "sweep"];

/// Tilt at which phase errors are evaluated, the edge of the ±500 µrad
/// fringe window.
pub const PROBE_TILT: f64 = 5e-4;

/// Reference-integrator tolerance used whenever the oracle is switched on.
pub const ORACLE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted scenario key, e.g. `geometry.toothWidth`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dotted-key overrides applied to the base scenario first.
    pub overrides: BTreeMap<String, String>,
    pub sweep: Option<SweepAxis>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub phase_mode: PhaseMode,
    pub oracle: bool,
    /// Worker threads for the sweep pool; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub gradient_scales: Vec<f64>,
    pub length_offsets: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            overrides: BTreeMap::new(),
            sweep: None,
            out_dir: None,
            seed: 0,
            phase_mode: PhaseMode::Analytic,
            oracle: false,
            workers: None,
            sigmas: vec![0.0, 1e-10, 1e-9, 1e-8],
            trials: 32,
            gradient_scales: vec![1.0 - 1e-6, 1.0, 1.0 + 1e-6],
            length_offsets: vec![-1e-8, 0.0, 1e-8],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(axis) = &self.sweep {
            if axis.values.is_empty() {
                return Err(Error::InvalidArgument("sweep values must be non-empty".into()));
            }
            if let Some(v) = axis.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sweep value {v} is not finite")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("jitter sigma {s} must be finite and >= 0")));
        }
        Ok(())
    }

    /// Base scenario with the configured overrides applied and validated.
    pub fn scenario(&self, base: &Scenario) -> Result<Scenario> {
        let mut s = base.clone();
        for (k, v) in &self.overrides {
            s = s.with_override(k, v)?;
        }
        s.validated()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportRow {
    pub index: usize,
    pub label: String,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    fn new(index: usize, label: impl Into<String>) -> Self {
        Self { index, label: label.into(), values: BTreeMap::new(), error: None }
    }

    fn set(&mut self, key: &str, v: f64) -> &mut Self {
        self.values.insert(key.to_string(), v);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub scenario_sha256: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub experiment: String,
    pub headline: BTreeMap<String, f64>,
    pub rows: Vec<ReportRow>,
    pub failures: usize,
    pub provenance: Provenance,
}

impl ExperimentReport {
    fn new(experiment: &str, scenario: &Scenario, seed: u64) -> Result<Self> {
        Ok(Self {
            experiment: experiment.into(),
            headline: BTreeMap::new(),
            rows: Vec::new(),
            failures: 0,
            provenance: Provenance {
                scenario_sha256: scenario_hash(scenario)?,
                version: env!("CARGO_PKG_VERSION").into(),
                seed,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Rows as CSV: `index,label,<sorted value keys>,error`.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut keys: Vec<&String> = self.rows.iter().flat_map(|r| r.values.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string(), "label".to_string()];
        header.extend(keys.iter().map(|k| k.to_string()));
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.index.to_string(), r.label.clone()];
            rec.extend(keys.iter().map(|k| r.values.get(*k).map(|v| format!("{v:e}")).unwrap_or_default()));
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `summary.json` and `rows.csv` in `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), self.to_json()?)?;
        self.write_rows_csv(fs::File::create(dir.join("rows.csv"))?)
    }
}

/// SHA-256 of the scenario's canonical JSON.
pub fn scenario_hash(scenario: &Scenario) -> Result<String> {
    let json = serde_json::to_string(scenario)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

fn with_tilt(scenario: &Scenario, phi: f64) -> Scenario {
    let mut s = scenario.clone();
    s.frame.phi = phi;
    s
}

/// Gravity part of the numeric phase at the probe tilt.
fn probe_phase(run: &SimulationResult, scenario: &Scenario) -> Result<f64> {
    let s = with_tilt(scenario, PROBE_TILT);
    let model = GravityModel::from_scenario(&s)?;
    Ok(numeric_phase(run, &s, &model)?.difference.gravity)
}

/// The replication suite on the built-in 2022 preset.
pub fn run_paper_replication() -> Result<ExperimentReport> {
    run_replication(&Scenario::paper_2022())
}

/// Closed forms, schedule counts, separation and recombination figures,
/// first-tooth common-mode comparison, oracle check and fringe widths.
pub fn run_replication(scenario: &Scenario) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("replication", scenario, 0)?;
    let derived = derive_quantities(scenario)?;
    let schedule = schedule_for(scenario)?;
    let run = simulate_branches(scenario, &schedule)?;
    let context = |what: &str, e: Error| Error::InvalidArgument(format!("replication {what}: {e}"));

    let h = &mut report.headline;
    h.insert("maxSeparationClosedForm".into(), derived.max_separation);
    h.insert("equilibriumOffset".into(), derived.equilibrium_offset);
    h.insert("angularFrequency".into(), derived.angular_frequency);
    h.insert("frequencyHz".into(), derived.angular_frequency / (2.0 * std::f64::consts::PI));
    h.insert("period".into(), derived.period);
    h.insert("crossingCount".into(), schedule.crossing_count() as f64);
    h.insert("piCount".into(), schedule.pi_count() as f64);
    let last_crossing = crate::schedule::crossing_times(&schedule.kinematics, &scenario.geometry, crate::schedule::Horizon::RegionEnd)
        .last()
        .copied()
        .unwrap_or(0.0);
    h.insert("lastCrossingTime".into(), last_crossing);
    let (t_max, dx_max) = run.max_separation();
    h.insert("maxSeparation".into(), dx_max);
    h.insert("maxSeparationTime".into(), t_max);
    for r in &run.recombination {
        let tag = if r.t == schedule.period { "T" } else { "2T" };
        h.insert(format!("recombinationDx{tag}"), r.dx);
        h.insert(format!("recombinationDv{tag}"), r.dv);
    }
    h.insert("analyticDeviation".into(), run.analytic_deviation());

    let reference = integrate_reference(scenario, &schedule, ORACLE_REL_TOL).map_err(|e| context("oracle", e))?;
    h.insert("oracleDeviation".into(), separation_deviation(&reference, &run));

    for (i, fraction) in [0.5, 1.0].into_iter().enumerate() {
        let mut s = scenario.clone();
        s.geometry.first_tooth_fraction = fraction;
        let sched = schedule_for(&s).map_err(|e| context("first-tooth schedule", e))?;
        let r = simulate_branches(&s, &sched).map_err(|e| context("first-tooth run", e))?;
        let mut row = ReportRow::new(i, format!("firstToothFraction={fraction}"));
        row.set("firstToothFraction", fraction).set("peakCommonMode", r.peak_common_mode());
        report.rows.push(row);
    }
    let peaks: Vec<f64> = report.rows.iter().map(|r| r.values["peakCommonMode"]).collect();
    let h = &mut report.headline;
    h.insert("peakCommonModeHalfTooth".into(), peaks[0]);
    h.insert("peakCommonModeFullTooth".into(), peaks[1]);
    h.insert("commonModeRatio".into(), peaks[0] / peaks[1]);

    h.insert("fringePeriodTwoOscillations".into(), fringe_period(scenario, Oscillations::Two)?);
    h.insert("fringePeriodSingleOscillation".into(), fringe_period(scenario, Oscillations::Single)?);
    let tilted = with_tilt(scenario, PROBE_TILT);
    let model = GravityModel::from_scenario(&tilted)?;
    let phase = numeric_phase(&run, &tilted, &model)?;
    h.insert("probeGravityPhaseNumeric".into(), phase.difference.gravity);
    h.insert("probeGravityPhaseAnalytic".into(), analytic_phases(&tilted, derived.period)?.delta);
    h.insert("probeGravityPhaseConstantG".into(), numeric_phase(&run, &tilted, &model.constant())?.difference.gravity);
    h.insert("timeInStateImbalance".into(), phase.time_imbalance);
    h.insert("zeemanBiasDifference".into(), phase.difference.zeeman_bias);
    h.insert("zfsDifference".into(), phase.difference.zfs);
    h.insert("zeemanGradientDifference".into(), phase.difference.zeeman_gradient);
    Ok(report)
}

struct TrialOutcome {
    dx: f64,
    dv: f64,
    phase_error: Option<f64>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Per-trial seed; trial k sees the same unit-normal draws at every sigma.
fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

/// Gaussian timing error on every π pulse; recombination residual at 2T
/// and probe-tilt gravity phase error against the unjittered run.
pub fn run_jitter_sensitivity(scenario: &Scenario, sigmas: &[f64], n_trials: usize, seed: u64, workers: Option<usize>) -> Result<ExperimentReport> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("nTrials must be at least 1".into()));
    }
    let mut report = ExperimentReport::new("jitter", scenario, seed)?;
    let schedule = schedule_for(scenario)?;
    let nominal = simulate_branches(scenario, &schedule)?;
    let nominal_phase = probe_phase(&nominal, scenario)?;
    let nominal_dx = nominal.final_recombination().separation;

    let jobs: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|i| (0..n_trials).map(move |k| (i, k))).collect();
    let outcomes: Vec<Result<TrialOutcome>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, k)| {
                let jittered = apply_jitter(&schedule, sigmas[i], trial_seed(seed, k))?;
                let run = simulate_branches(scenario, &jittered)?;
                let rec = run.final_recombination();
                Ok(TrialOutcome {
                    dx: (rec.separation - nominal_dx).abs(),
                    dv: rec.dv,
                    phase_error: probe_phase(&run, scenario).ok().map(|p| (p - nominal_phase).abs()),
                })
            })
            .collect()
    });

    let mut maxima = Vec::new();
    for (i, &sigma) in sigmas.iter().enumerate() {
        let mut row = ReportRow::new(i, format!("sigma={sigma:e}"));
        row.set("sigma", sigma);
        let trials = &outcomes[i * n_trials..(i + 1) * n_trials];
        let ok: Vec<&TrialOutcome> = trials.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failed = trials.len() - ok.len();
        if failed > 0 {
            let first = trials.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string());
            row.error = first;
            report.failures += failed;
        }
        let n = ok.len().max(1) as f64;
        let max_dx = ok.iter().map(|o| o.dx).fold(0.0, f64::max);
        row.set("meanResidualDx", ok.iter().map(|o| o.dx).sum::<f64>() / n)
            .set("maxResidualDx", max_dx)
            .set("maxResidualDv", ok.iter().map(|o| o.dv).fold(0.0, f64::max))
            .set("trials", ok.len() as f64);
        let phases: Vec<f64> = ok.iter().filter_map(|o| o.phase_error).collect();
        row.set("unrecombined", (ok.len() - phases.len()) as f64);
        if !phases.is_empty() {
            row.set("meanPhaseError", phases.iter().sum::<f64>() / phases.len() as f64)
                .set("maxPhaseError", phases.iter().copied().fold(0.0, f64::max));
        }
        maxima.push((sigma, max_dx));
        report.rows.push(row);
    }

    // residual per unit sigma from the largest nonzero sigma
    if let Some(&(s, dx)) = maxima.iter().filter(|(s, _)| *s > 0.0).max_by(|a, b| a.0.total_cmp(&b.0)) {
        report.headline.insert("residualSlope".into(), dx / s);
    }
    report.headline.insert("nominalDx2T".into(), nominal_dx);
    report.headline.insert("trials".into(), n_trials as f64);
    Ok(report)
}

fn drift_row(index: usize, label: String, perturbed: &Scenario, schedule: &PulseSchedule, nominal_phase: f64) -> ReportRow {
    let mut row = ReportRow::new(index, label);
    match simulate_branches(perturbed, schedule) {
        Ok(run) => {
            let rec = run.final_recombination();
            row.set("dx2T", rec.separation).set("dv2T", rec.dv).set("maxSeparation", run.max_separation().1);
            match probe_phase(&run, perturbed) {
                Ok(p) => {
                    row.set("phaseError", p - nominal_phase);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Pulses fire on the nominal schedule while the gradient is scaled or the
/// teeth stretched so the teeth region grows by `offset` metres.
pub fn run_drift_sensitivity(scenario: &Scenario, gradient_scales: &[f64], length_offsets: &[f64]) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("drift", scenario, 0)?;
    let schedule = schedule_for(scenario)?;
    let nominal = simulate_branches(scenario, &schedule)?;
    let nominal_phase = probe_phase(&nominal, scenario)?;
    let length = scenario.geometry.teeth_region_length;

    let mut jobs: Vec<(String, Scenario)> = Vec::new();
    for &scale in gradient_scales {
        let mut s = scenario.clone();
        s.geometry.gradient_magnitude *= scale;
        jobs.push((format!("gradientScale={scale}"), s));
    }
    for &offset in length_offsets {
        let mut s = scenario.clone();
        s.geometry.tooth_width *= 1.0 + offset / length;
        jobs.push((format!("lengthOffset={offset:e}"), s));
    }
    let n_scales = gradient_scales.len();
    report.rows = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (label, s))| {
            let mut row = drift_row(i, label, &s, &schedule, nominal_phase);
            if i < n_scales {
                row.set("gradientScale", gradient_scales[i]);
            } else {
                row.set("lengthOffset", length_offsets[i - n_scales]);
            }
            row
        })
        .collect();
    report.failures = report.rows.iter().filter(|r| r.error.is_some()).count();
    let worst = report.rows.iter().filter_map(|r| r.get("dx2T")).map(f64::abs).fold(0.0, f64::max);
    report.headline.insert("maxAbsDx2T".into(), worst);
    report.headline.insert("nominalDx2T".into(), nominal.final_recombination().separation);
    Ok(report)
}

fn sweep_point(base: &Scenario, axis: &SweepAxis, index: usize, config: &ExperimentConfig) -> ReportRow {
    let value = axis.values[index];
    let mut row = ReportRow::new(index, format!("{}={value:e}", axis.parameter));
    row.set("value", value);
    let outcome = (|| -> Result<()> {
        let s = base.with_override(&axis.parameter, &format!("{value:e}"))?.validated()?;
        let schedule = schedule_for(&s)?;
        let run = simulate_branches(&s, &schedule)?;
        let rec = run.final_recombination();
        let (t_max, dx_max) = run.max_separation();
        row.set("crossingCount", schedule.crossing_count() as f64)
            .set("maxSeparation", dx_max)
            .set("maxSeparationTime", t_max)
            .set("dx2T", rec.dx)
            .set("dv2T", rec.dv)
            .set("analyticDeviation", run.analytic_deviation());
        let dphi = match config.phase_mode {
            PhaseMode::Analytic => analytic_phases(&s, run.period)?.delta,
            PhaseMode::Numeric => numeric_phase(&run, &s, &GravityModel::from_scenario(&s)?)?.difference.gravity,
        };
        let c = (0.5 * dphi).cos();
        row.set("dphi", dphi).set("pA", c * c);
        if config.oracle {
            let reference = integrate_reference(&s, &schedule, ORACLE_REL_TOL)?;
            row.set("oracleDeviation", separation_deviation(&reference, &run));
        }
        if let Some(dir) = &config.out_dir {
            let file = fs::File::create(dir.join(point_file_name(index)))?;
            run.write_csv(std::io::BufWriter::new(file), true)?;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

/// Cadence-only trajectory file for sweep point `index`.
pub fn point_file_name(index: usize) -> String {
    format!("point_{index:04}.csv")
}

/// Evaluate every sweep value concurrently. Failed points are recorded in
/// their row and counted; the sweep carries on.
pub fn run_sweep(base: &Scenario, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let scenario = config.scenario(base)?;
    let axis = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("sweep experiment needs a sweep axis".into()))?;
    // reject a bad key up front rather than once per point
    scenario.with_override(&axis.parameter, &format!("{:e}", axis.values[0]))?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut report = ExperimentReport::new("sweep", &scenario, config.seed)?;
    report.rows = pool(config.workers)?.install(|| (0..axis.values.len()).into_par_iter().map(|i| sweep_point(&scenario, axis, i, config)).collect());
    report.failures = report.rows.iter().filter(|r| r.error.is_some()).count();
    report.headline.insert("points".into(), axis.values.len() as f64);
    report.headline.insert("failures".into(), report.failures as f64);
    Ok(report)
}

/// Dispatch by experiment name.
pub fn run_named(name: &str, base: &Scenario, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let report = match name {
        "replication" => run_replication(&config.scenario(base)?)?,
        "jitter" => run_jitter_sensitivity(&config.scenario(base)?, &config.sigmas, config.trials, config.seed, config.workers)?,
        "drift" => pool(config.workers)?.install(|| run_drift_sensitivity(&config.scenario(base)?, &config.gradient_scales, &config.length_offsets))?,
        "sweep" => run_sweep(base, config)?,
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    if let Some(dir) = &config.out_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_headline() {
        let r = run_paper_replication().unwrap();
        let h = &r.headline;
        assert!((h["maxSeparation"] - 276e-9).abs() / 276e-9 < 0.02);
        assert!(h["analyticDeviation"] < 1e-10);
        assert!((h["crossingCount"] - 9800.0).abs() / 9800.0 < 0.02);
        assert!(h["commonModeRatio"] <= 0.1, "{}", h["commonModeRatio"]);
        assert!(h["oracleDeviation"] < 1e-11);
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn jitter_zero_sigma_reproduces_nominal_and_grows() {
        let s = Scenario::paper_2022();
        let r = run_jitter_sensitivity(&s, &[0.0, 1e-10, 1e-9, 1e-8], 4, 11, Some(2)).unwrap();
        assert_eq!(r.rows[0].get("maxResidualDx"), Some(0.0));
        assert_eq!(r.rows[0].get("maxPhaseError"), Some(0.0));
        let dx: Vec<f64> = r.rows.iter().map(|row| row.get("maxResidualDx").unwrap()).collect();
        assert!(dx.windows(2).all(|w| w[1] >= w[0]), "{dx:?}");
        assert!(dx[3] > 0.0);
        let again = run_jitter_sensitivity(&s, &[0.0, 1e-10, 1e-9, 1e-8], 4, 11, Some(3)).unwrap();
        assert_eq!(r.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn drift_baseline_and_symmetry() {
        let s = Scenario::paper_2022();
        let r = run_drift_sensitivity(&s, &[1.0], &[-1e-8, 0.0, 1e-8, 2e-8]).unwrap();
        assert_eq!(r.failures, 0);
        let nominal = r.headline["nominalDx2T"];
        assert_eq!(r.rows[0].get("dx2T"), Some(nominal));
        assert_eq!(r.rows[0].get("phaseError"), Some(0.0));
        assert_eq!(r.rows[2].get("dx2T"), Some(nominal));
        let minus = r.rows[1].get("dx2T").unwrap() - nominal;
        let plus = r.rows[3].get("dx2T").unwrap() - nominal;
        let double = r.rows[4].get("dx2T").unwrap() - nominal;
        assert!(plus.is_finite() && plus != 0.0);
        // an early and a late pulse both invert the separation equilibrium
        // for the mistiming, so the residual goes as |offset|
        assert!((plus - minus).abs() < 1e-3 * plus.abs(), "{plus} {minus}");
        assert!((double / plus - 2.0).abs() < 0.01, "{}", double / plus);
    }

    #[test]
    fn sweep_over_tooth_width_scales_crossings() {
        let config = ExperimentConfig {
            sweep: Some(SweepAxis { parameter: "geometry.toothWidth".into(), values: vec![57.5e-6, 115e-6, 230e-6] }),
            ..Default::default()
        };
        let r = run_sweep(&Scenario::paper_2022(), &config).unwrap();
        assert_eq!(r.failures, 0);
        let n: Vec<f64> = r.rows.iter().map(|row| row.get("crossingCount").unwrap()).collect();
        assert!((n[0] - 2.0 * n[1]).abs() <= 1.0, "{n:?}");
        assert!((n[1] - 2.0 * n[2]).abs() <= 1.0, "{n:?}");
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let config = ExperimentConfig {
            sweep: Some(SweepAxis { parameter: "diamond.susceptibility".into(), values: vec![-2.2e-5, 1e-5] }),
            ..Default::default()
        };
        let r = run_sweep(&Scenario::paper_2022(), &config).unwrap();
        assert_eq!(r.failures, 1);
        assert!(r.rows[0].error.is_none());
        assert!(r.rows[1].error.as_deref().unwrap().contains("susceptibility"));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig { sweep: Some(SweepAxis { parameter: "frame.phi".into(), values: vec![] }), ..Default::default() };
        assert!(c.validate().is_err());
        c.sweep = Some(SweepAxis { parameter: "frame.phi".into(), values: vec![f64::NAN] });
        assert!(c.validate().is_err());
        c.sweep = None;
        c.workers = Some(0);
        assert!(c.validate().is_err());
        assert!(matches!(run_named("nope", &Scenario::paper_2022(), &ExperimentConfig::default()), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig { seed: 9, oracle: true, ..Default::default() };
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.trials, 32);
    }

    #[test]
    fn rows_csv_has_union_of_columns() {
        let mut r = ExperimentReport::new("x", &Scenario::paper_2022(), 0).unwrap();
        let mut a = ReportRow::new(0, "a");
        a.set("p", 1.0);
        let mut b = ReportRow::new(1, "b");
        b.set("q", 2.0);
        b.error = Some("boom".into());
        r.rows = vec![a, b];
        let mut out = Vec::new();
        r.write_rows_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "index,label,p,q,error\n0,a,1e0,,\n1,b,,2e0,boom\n");
    }
}
