use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use nanodrop::dynamics::{integrate_reference, separation_deviation, simulate_branches};
use nanodrop::experiments::{run_named, ExperimentConfig, SweepAxis, EXPERIMENTS};
use nanodrop::field::{column_summary, fit_square_wave, ingest_field_map, ColumnSpec, GradientUnit, LengthUnit};
use nanodrop::interference::{fringe_scan, PhaseMode};
use nanodrop::model::{derive_quantities, load_scenario_with_overrides, parse_override, Scenario};
use nanodrop::plot::LinePlot;
use nanodrop::schedule::{apply_jitter, schedule_for};
use nanodrop::Error;

const OUT_DIR_ENV: &str = "NANODROP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "nanodrop", version, about = "Falling-nanodiamond spin interferometer simulator")]
struct Cli {
    /// Scenario JSON; the built-in 2022 preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override applied after the config, e.g. geometry.toothWidth=115e-6.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Output file (directory for `experiment`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default output directory when --out is not given.
    #[arg(long, env = OUT_DIR_ENV, global = true, hide_env_values = true)]
    out_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form derived quantities.
    Params,
    /// Compile the pulse schedule.
    Schedule(ScheduleArgs),
    /// Propagate both branches and write the trajectory.
    Simulate(SimulateArgs),
    /// Interference probability over a tilt scan.
    Fringe(FringeArgs),
    /// Run a named experiment (replication, jitter, drift, sweep).
    Experiment(ExperimentArgs),
    /// Ingest a field map and summarise it as a square wave.
    Fieldmap(FieldmapArgs),
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long)]
    first_tooth_fraction: Option<f64>,
    /// Gaussian timing jitter on π pulses, s.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    first_tooth_fraction: Option<f64>,
    /// Also run the adaptive reference integrator and report the deviation.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    /// Write only the fixed-cadence rows.
    #[arg(long)]
    cadence_only: bool,
    /// SVG plot of the separation.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FringeArgs {
    #[arg(long, default_value_t = -5e-4, allow_hyphen_values = true)]
    phi_min: f64,
    #[arg(long, default_value_t = 5e-4, allow_hyphen_values = true)]
    phi_max: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Analytic)]
    mode: ModeArg,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Analytic,
    Numeric,
}

impl From<ModeArg> for PhaseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Analytic => PhaseMode::Analytic,
            ModeArg::Numeric => PhaseMode::Numeric,
        }
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    name: String,
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    experiment_config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gradient_scales: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    length_offsets: Option<Vec<f64>>,
    /// Sweep parameter as a dotted scenario key.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct FieldmapArgs {
    path: PathBuf,
    #[arg(long, default_value = "z_m")]
    z_col: String,
    #[arg(long, default_value = "dBx_dx_T_per_m")]
    dbx_col: String,
    /// Optional columns are skipped when the file lacks them.
    #[arg(long, default_value = "dBy_dx_T_per_m")]
    dby_col: String,
    #[arg(long, default_value = "dBz_dx_T_per_m")]
    dbz_col: String,
    #[arg(long, default_value = "Bx_T")]
    bx_col: String,
    /// T/m or T/mm; read from the header when omitted.
    #[arg(long)]
    gradient_unit: Option<GradientUnit>,
    /// m or mm; read from the header when omitted.
    #[arg(long)]
    z_unit: Option<LengthUnit>,
    /// Fit an ideal square wave.
    #[arg(long)]
    fit: bool,
    #[arg(long, allow_hyphen_values = true)]
    z_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    z_max: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

/// 2 for bad input (usage, validation, file format), 1 for runtime failure.
fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    let usage = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<Error>(),
            Some(
                Error::InvalidScenario(_)
                    | Error::Parse { .. }
                    | Error::Override { .. }
                    | Error::MissingColumn(_)
                    | Error::TooFewSamples { .. }
                    | Error::FieldMap(_)
                    | Error::InvalidArgument(_)
                    | Error::UnknownExperiment(_)
                    | Error::InvalidSchedule(_)
            )
        ) || cause.downcast_ref::<UsageError>().is_some()
    });
    ExitCode::from(if usage { 2 } else { 1 })
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Params => cmd_params(cli),
        Command::Schedule(a) => cmd_schedule(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Fringe(a) => cmd_fringe(cli, a),
        Command::Experiment(a) => cmd_experiment(cli, a),
        Command::Fieldmap(a) => cmd_fieldmap(cli, a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load(cli: &Cli, extra: &[(String, String)]) -> Result<Scenario> {
    let mut overrides = cli.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    overrides.extend_from_slice(extra);
    let scenario = match &cli.config {
        Some(path) => load_scenario_with_overrides(path, &overrides)?,
        None => Scenario::from_json_with_overrides("", &overrides)?.validated()?,
    };
    for w in scenario.warnings() {
        warn!("{w}");
    }
    Ok(scenario)
}

fn fraction_override(fraction: Option<f64>) -> Vec<(String, String)> {
    fraction
        .map(|f| vec![("geometry.firstToothFraction".to_string(), format!("{f:e}"))])
        .unwrap_or_default()
}

/// Where a command's main output goes: --out, else the default directory,
/// else stdout.
fn output_target(cli: &Cli, default_name: &str) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cli.out_dir.as_ref().map(|d| d.join(default_name)))
}

fn open_output(target: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match target {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            Box::new(io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
        }
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn cmd_params(cli: &Cli) -> Result<()> {
    let scenario = load(cli, &[])?;
    let d = derive_quantities(&scenario)?;
    let mut out = open_output(&output_target(cli, &format!("params.{}", ext(cli.format))))?;
    match cli.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&d)?)?,
        Format::Csv => {
            writeln!(out, "quantity,value,unit")?;
            writeln!(out, "s,{:e},m", d.max_separation)?;
            writeln!(out, "delta_x_eq,{:e},m", d.equilibrium_offset)?;
            writeln!(out, "omega,{:e},rad/s", d.angular_frequency)?;
            writeln!(out, "frequency,{:e},Hz", d.angular_frequency / (2.0 * std::f64::consts::PI))?;
            writeln!(out, "T,{:e},s", d.period)?;
            writeln!(out, "a0,{:e},m/s^2", d.common_mode_accel)?;
            writeln!(out, "a_s,{:e},m/s^2", d.spin_accel)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_schedule(cli: &Cli, a: &ScheduleArgs) -> Result<()> {
    let scenario = load(cli, &fraction_override(a.first_tooth_fraction))?;
    let mut schedule = schedule_for(&scenario)?;
    if a.jitter > 0.0 {
        schedule = apply_jitter(&schedule, a.jitter, a.seed)?;
    }
    info!("{} π pulses, {} crossings", schedule.pi_count(), schedule.crossing_count());
    let mut out = open_output(&output_target(cli, &format!("schedule.{}", ext(cli.format))))?;
    match cli.format {
        Format::Csv => schedule.write_csv(&mut out)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(schedule.events())?)?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let scenario = load(cli, &fraction_override(a.first_tooth_fraction))?;
    let schedule = schedule_for(&scenario)?;
    let run = simulate_branches(&scenario, &schedule)?;
    let (t_max, dx_max) = run.max_separation();
    let mut summary = serde_json::json!({
        "maxSeparation": dx_max,
        "maxSeparationTime": t_max,
        "peakCommonMode": run.peak_common_mode(),
        "analyticDeviation": run.analytic_deviation(),
        "recombination": run.recombination,
    });
    if a.oracle {
        let reference = integrate_reference(&scenario, &schedule, a.rel_tol)?;
        summary["oracleDeviation"] = serde_json::json!(separation_deviation(&reference, &run));
    }

    let target = output_target(cli, &format!("trajectory.{}", ext(cli.format)));
    let to_stdout = target.is_none();
    let mut out = open_output(&target)?;
    match cli.format {
        Format::Csv => run.write_csv(&mut out, a.cadence_only)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?,
    }
    out.flush()?;
    if let Some(svg) = &a.svg {
        let pts = run.samples.iter().map(|s| (s.t, s.separation)).collect();
        fs::write(svg, LinePlot::new("Branch separation", "t (s)", "x_A − x_B (m)").series("dx", pts).to_svg())?;
    }
    // keep stdout clean when it carries the CSV
    if cli.format == Format::Csv {
        let text = serde_json::to_string_pretty(&summary)?;
        if to_stdout {
            eprintln!("{text}");
        } else {
            println!("{text}");
        }
    }
    Ok(())
}

fn cmd_fringe(cli: &Cli, a: &FringeArgs) -> Result<()> {
    let scenario = load(cli, &[])?;
    let result = fringe_scan(&scenario, a.phi_min, a.phi_max, a.points, a.mode.into())?;
    let mut out = open_output(&output_target(cli, &format!("fringe.{}", ext(cli.format))))?;
    match cli.format {
        Format::Csv => result.write_csv(&mut out)?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?,
    }
    out.flush()?;
    if let Some(svg) = &a.svg {
        fs::write(svg, result.to_svg())?;
    }
    Ok(())
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    if !EXPERIMENTS.contains(&a.name.as_str()) {
        return Err(UsageError(format!("unknown experiment `{}`; available: {}", a.name, EXPERIMENTS.join(", "))).into());
    }
    let base = load(cli, &[])?;
    let mut config: ExperimentConfig = match &a.experiment_config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.workers.is_some() {
        config.workers = a.workers;
    }
    if let Some(n) = a.trials {
        config.trials = n;
    }
    if let Some(v) = &a.sigmas {
        config.sigmas = v.clone();
    }
    if let Some(v) = &a.gradient_scales {
        config.gradient_scales = v.clone();
    }
    if let Some(v) = &a.length_offsets {
        config.length_offsets = v.clone();
    }
    if let Some(m) = a.mode {
        config.phase_mode = m.into();
    }
    config.oracle |= a.oracle;
    match (&a.param, &a.values) {
        (Some(p), Some(v)) => config.sweep = Some(SweepAxis { parameter: p.clone(), values: v.clone() }),
        (None, None) => {}
        _ => return Err(UsageError("--param and --values go together".into()).into()),
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cli.out_dir.clone())
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("nanodrop-out"));
    config.out_dir = Some(dir.clone());

    let report = run_named(&a.name, &base, &config)?;
    print_headline(&report.headline, &dir);
    if report.failures > 0 {
        anyhow::bail!("{} point(s) failed; see {}", report.failures, dir.join("summary.json").display());
    }
    Ok(())
}

fn print_headline(headline: &std::collections::BTreeMap<String, f64>, dir: &Path) {
    for (k, v) in headline {
        println!("{k:<32} {v:e}");
    }
    println!("report written to {}", dir.display());
}

fn cmd_fieldmap(cli: &Cli, a: &FieldmapArgs) -> Result<()> {
    let spec = ColumnSpec {
        z: a.z_col.clone(),
        dbx_dx: a.dbx_col.clone(),
        dby_dx: Some(a.dby_col.clone()),
        dbz_dx: Some(a.dbz_col.clone()),
        bx: Some(a.bx_col.clone()),
        gradient_unit: a.gradient_unit,
        z_unit: a.z_unit,
    };
    let map = ingest_field_map(&a.path, &spec)?;
    let range = match (a.z_min, a.z_max) {
        (None, None) => None,
        (lo, hi) => {
            let (z0, z1) = map.z_range();
            Some((lo.unwrap_or(z0), hi.unwrap_or(z1)))
        }
    };
    let mut summary = serde_json::json!({
        "rows": map.samples().len(),
        "droppedRows": map.dropped_rows,
        "zRange": map.z_range(),
        "columns": column_summary(&map),
    });
    if a.fit {
        summary["fit"] = serde_json::to_value(fit_square_wave(&map, range)?)?;
    }
    let mut out = open_output(&output_target(cli, &format!("fieldmap.{}", ext(cli.format))))?;
    match cli.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?,
        Format::Csv => {
            writeln!(out, "quantity,value")?;
            flatten(&summary, "", &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn flatten(v: &serde_json::Value, prefix: &str, out: &mut dyn Write) -> io::Result<()> {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, &key, out)?;
            }
            Ok(())
        }
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, &format!("{prefix}.{i}"), out)?;
            }
            Ok(())
        }
        other => writeln!(out, "{prefix},{other}"),
    }
}
