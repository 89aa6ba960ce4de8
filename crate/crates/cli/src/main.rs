//! `fcsd`: degradation-aware battery dispatch from the command line.
//!
//! Exit codes: 0 success, 1 input error, 2 solver did not converge.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcsd_core::domain::{LoadProfile, PenaltyMode, PriceSeries};
use fcsd_core::io::audit::audit;
use fcsd_core::io::config::RunConfig;
use fcsd_core::io::report::{Metadata, Summary};
use fcsd_core::io::series::{
    load_day, parse_schedule_csv, write_load_file, write_prices_file, write_schedule_file,
    TimeIndex,
};
use fcsd_core::io::sweep::{sweep, write_sweep};
use fcsd_core::io::synth::{gen_synthetic_day, ProfileKind};
use fcsd_core::model::{build_problem, cost_breakdown, DayInputs};
use fcsd_core::rolling::{roll, ForecastProvider, StaticForecast};
use fcsd_core::solver::{grid_gap_bound, oracle_solve, solve, Termination};
use fcsd_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "fcsd", version, about = "Degradation-aware day-ahead battery dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one day at once.
    Solve(SolveArgs),
    /// Re-solve the remaining day at every step and commit only the first action.
    Roll(RollArgs),
    /// Solve once per penalty coefficient.
    Sweep(SweepArgs),
    /// Write a synthetic price and load day.
    Gen(GenArgs),
    /// Check a schedule file: feasibility, wear and rainflow cycles.
    Audit(AuditArgs),
    /// Brute-force grid search, for cross-checking tiny instances.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    /// Price CSV (`timestamp,price_dkk_per_mwh`).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Load CSV (`timestamp,load_mw`).
    #[arg(long)]
    load: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty coefficient in DKK/kWh.
    #[arg(long = "a-k")]
    a_k: Option<f64>,
    /// How a_k becomes the penalty weight (`capacity` or `paper`).
    #[arg(long)]
    penalty_mode: Option<String>,
    /// Override any configuration key, e.g. `--set soc_final=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Schedule CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON to write.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RollArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Price forecast CSV; defaults to the realized prices.
    #[arg(long)]
    forecast_prices: Option<PathBuf>,
    /// Load forecast CSV; defaults to the realized load.
    #[arg(long)]
    forecast_load: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Comma-separated a_k values in DKK/kWh.
    #[arg(long, value_delimiter = ',', required = true)]
    weights: Vec<f64>,
    /// Sweep CSV to write; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// `fcs` or `flat`.
    #[arg(long, default_value = "fcs")]
    kind: String,
    /// Directory for `prices.csv` and `load.csv`.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Schedule CSV as written by `solve` or `roll`.
    #[arg(long)]
    schedule: PathBuf,
    /// Battery configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prices and load to audit against; the schedule's own columns are
    /// used when absent.
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    load: Option<PathBuf>,
    /// Audit JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Power levels per variable and step.
    #[arg(long, default_value_t = 11)]
    levels: usize,
}

/// Outcome of a successful command: the JSON echoed to stdout and whether
/// the solver converged.
struct Outcome {
    echo: Value,
    converged: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out.echo).expect("json");
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{text}");
            if out.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: solver did not converge");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Solve(a) => cmd_solve(a),
        Command::Roll(a) => cmd_roll(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A loaded configuration plus the labelled raw bytes of every input file,
/// for the metadata digest.
struct Loaded {
    config: RunConfig,
    files: Vec<(String, Vec<u8>)>,
}

impl Loaded {
    fn metadata(&self, command: &str) -> Metadata {
        let inputs: Vec<(&str, &[u8])> =
            self.files.iter().map(|(l, b)| (l.as_str(), b.as_slice())).collect();
        Metadata::new(command, &inputs, &self.config)
    }
}

fn load_config(path: Option<&Path>, files: &mut Vec<(String, Vec<u8>)>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            files.push(("config".into(), read(p)?));
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn apply_overrides(config: RunConfig, inputs: &Inputs) -> Result<RunConfig> {
    let mut value = serde_json::to_value(&config)?;
    let map = value.as_object_mut().expect("config is an object");
    if let Some(a) = inputs.a_k {
        map.insert("a_k_dkk_per_kwh".into(), json!(a));
    }
    if let Some(m) = &inputs.penalty_mode {
        let mode: PenaltyMode = serde_json::from_value(json!(m))
            .map_err(|_| Error::Input(format!("--penalty-mode must be capacity or paper, got `{m}`")))?;
        map.insert("penalty_mode".into(), serde_json::to_value(mode)?);
    }
    for kv in &inputs.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let parsed = serde_json::from_str(v).unwrap_or_else(|_| json!(v));
        map.insert(k.trim().to_string(), parsed);
    }
    serde_json::from_value(value).map_err(|e| Error::Input(format!("invalid override: {e}")))
}

fn load_inputs(inputs: &Inputs) -> Result<(Loaded, TimeIndex, DayInputs)> {
    let mut files = Vec::new();
    let config = load_config(inputs.config.as_deref(), &mut files)?;
    let config = apply_overrides(config, inputs)?;
    let prices = inputs
        .prices
        .clone()
        .or_else(|| config.prices.clone())
        .ok_or_else(|| Error::Input("missing --prices".into()))?;
    let load = inputs
        .load
        .clone()
        .or_else(|| config.load.clone())
        .ok_or_else(|| Error::Input("missing --load".into()))?;
    files.insert(0, ("prices".into(), read(&prices)?));
    files.insert(1, ("load".into(), read(&load)?));
    let (index, day) = load_day(&prices, &load)?;
    config.battery().validate()?;
    Ok((Loaded { config, files }, index, day))
}

fn write_summary(path: Option<&Path>, echo: &Value) -> Result<()> {
    if let Some(p) = path {
        let mut text = serde_json::to_string_pretty(echo)?;
        text.push('\n');
        write(p, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<Outcome> {
    let (loaded, index, day) = load_inputs(&a.inputs)?;
    let bat = loaded.config.battery();
    let inst = build_problem(&day, &bat, &loaded.config.problem_options())?;
    let report = solve(&inst, &loaded.config.solve_options());
    let breakdown = cost_breakdown(&report.schedule, &day, &bat)?;
    let summary = Summary::from_report(
        &report,
        breakdown,
        inst.surrogate_penalty(&report.schedule.to_flat()),
    );
    if let Some(out) = &a.out {
        write_schedule_file(out, &index, &day, &bat, &report.schedule)?;
    }
    let echo = json!({ "metadata": loaded.metadata("solve"), "summary": summary });
    write_summary(a.summary.as_deref(), &echo)?;
    Ok(Outcome {
        echo,
        converged: report.termination == Termination::Converged,
    })
}

/// Forecasts read from files; each plan sees the tail from step `t`.
struct FileForecast {
    prices: PriceSeries,
    load: LoadProfile,
}

impl ForecastProvider for FileForecast {
    fn forecast(&self, t: usize) -> Result<(PriceSeries, LoadProfile)> {
        Ok((
            PriceSeries::new(self.prices.values()[t..].to_vec())?,
            LoadProfile::new(self.load.values()[t..].to_vec())?,
        ))
    }
}

fn cmd_roll(a: RollArgs) -> Result<Outcome> {
    let (mut loaded, index, day) = load_inputs(&a.inputs)?;
    let bat = loaded.config.battery();
    let forecast_part = |path: &Option<PathBuf>, label: &str, files: &mut Vec<(String, Vec<u8>)>| -> Result<Option<Vec<f64>>> {
        let Some(p) = path else { return Ok(None) };
        files.push((label.to_string(), read(p)?));
        let (idx, values) = match label {
            "forecast_prices" => {
                let (i, s) = fcsd_core::io::series::parse_prices_csv(p)?;
                (i, s.values().to_vec())
            }
            _ => {
                let (i, s) = fcsd_core::io::series::parse_load_csv(p)?;
                (i, s.values().to_vec())
            }
        };
        if idx != index {
            return Err(Error::Input(format!(
                "{} does not cover the same time axis as the realized data",
                p.display()
            )));
        }
        Ok(Some(values))
    };
    let fp = forecast_part(&a.forecast_prices, "forecast_prices", &mut loaded.files)?;
    let fl = forecast_part(&a.forecast_load, "forecast_load", &mut loaded.files)?;
    let opts = loaded.config.rolling_options();
    let result = if fp.is_none() && fl.is_none() {
        roll(&day, &bat, &StaticForecast(&day), &opts)?
    } else {
        let provider = FileForecast {
            prices: PriceSeries::new(fp.unwrap_or_else(|| day.prices.values().to_vec()))?,
            load: LoadProfile::new(fl.unwrap_or_else(|| day.load.values().to_vec()))?,
        };
        roll(&day, &bat, &provider, &opts)?
    };
    if let Some(out) = &a.out {
        write_schedule_file(out, &index, &day, &bat, &result.schedule)?;
    }
    let converged = result.reports.iter().all(|r| r.termination == Termination::Converged);
    let iterations: usize = result.reports.iter().map(|r| r.iterations).sum();
    let inst = build_problem(&day, &bat, &loaded.config.problem_options())?;
    let x = result.schedule.to_flat();
    let mut summary = Summary::from_report(&result.reports[0], result.breakdown, inst.surrogate_penalty(&x));
    summary.objective = fcsd_core::model::objective_value(&x, &inst);
    summary.iterations = iterations;
    summary.termination = result
        .reports
        .iter()
        .map(|r| r.termination)
        .find(|t| *t != Termination::Converged)
        .unwrap_or(Termination::Converged);
    summary.feasibility_residual = fcsd_core::solver::feasibility_residual(&inst, &result.schedule);
    summary.optimality_residual = result.reports.iter().map(|r| r.optimality_residual).fold(0.0, f64::max);
    summary.simultaneity_flags = result
        .schedule
        .simultaneous_steps(fcsd_core::solver::SIMULTANEITY_FRACTION * bat.p_max_mw);
    summary.certificate = None;
    summary.relaxed_steps = Some(result.relaxed_steps.clone());
    let echo = json!({ "metadata": loaded.metadata("roll"), "summary": summary });
    write_summary(a.summary.as_deref(), &echo)?;
    Ok(Outcome { echo, converged })
}

fn cmd_sweep(a: SweepArgs) -> Result<Outcome> {
    let (loaded, _, day) = load_inputs(&a.inputs)?;
    let rows = sweep(&day, &loaded.config, &a.weights)?;
    let mut csv = Vec::new();
    write_sweep(&mut csv, &rows).map_err(|source| Error::Io {
        path: "<sweep output>".into(),
        source,
    })?;
    match &a.out {
        Some(p) => write(p, &csv)?,
        None => {
            let _ = std::io::stdout().write_all(&csv);
        }
    }
    let converged = rows.iter().all(|r| r.status == "converged");
    Ok(Outcome {
        echo: json!({ "metadata": loaded.metadata("sweep"), "rows": rows }),
        converged,
    })
}

fn cmd_gen(a: GenArgs) -> Result<Outcome> {
    let kind: ProfileKind = a.kind.parse()?;
    let (index, day) = gen_synthetic_day(a.seed, kind);
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let prices = a.out_dir.join("prices.csv");
    let load = a.out_dir.join("load.csv");
    write_prices_file(&prices, &index, &day.prices)?;
    write_load_file(&load, &index, &day.load)?;
    let loaded = Loaded {
        config: RunConfig::default(),
        files: vec![("seed".into(), a.seed.to_le_bytes().to_vec()), ("kind".into(), a.kind.into_bytes())],
    };
    Ok(Outcome {
        echo: json!({
            "metadata": loaded.metadata("gen"),
            "prices": prices,
            "load": load,
            "steps": day.steps(),
        }),
        converged: true,
    })
}

fn cmd_audit(a: AuditArgs) -> Result<Outcome> {
    let mut files = vec![("schedule".to_string(), read(&a.schedule)?)];
    let config = load_config(a.config.as_deref(), &mut files)?;
    let parsed = parse_schedule_csv(&a.schedule)?;
    let day = match (&a.prices, &a.load) {
        (Some(p), Some(l)) => {
            files.push(("prices".into(), read(p)?));
            files.push(("load".into(), read(l)?));
            load_day(p, l)?.1
        }
        (None, None) => DayInputs::new(
            parsed.index.grid()?,
            PriceSeries::new(parsed.prices.clone())?,
            LoadProfile::new(parsed.load.clone())?,
        )?,
        _ => return Err(Error::Input("--prices and --load must be given together".into())),
    };
    let report = audit(&parsed.schedule, &day, &config.battery())?;
    let loaded = Loaded { config, files };
    let echo = json!({ "metadata": loaded.metadata("audit"), "audit": report });
    write_summary(a.out.as_deref(), &echo)?;
    Ok(Outcome { echo, converged: true })
}

fn cmd_oracle(a: OracleArgs) -> Result<Outcome> {
    let (loaded, _, day) = load_inputs(&a.inputs)?;
    let bat = loaded.config.battery();
    let inst = build_problem(&day, &bat, &loaded.config.problem_options())?;
    let oracle = oracle_solve(&inst, a.levels)?;
    let solved = solve(&inst, &loaded.config.solve_options());
    let bound = grid_gap_bound(&inst, a.levels);
    let within = solved.objective <= oracle.objective + 1e-9
        && solved.objective >= oracle.objective - bound;
    Ok(Outcome {
        echo: json!({
            "metadata": loaded.metadata("oracle"),
            "levels": a.levels,
            "oracle_objective": oracle.objective,
            "oracle_schedule": oracle.schedule,
            "solve_objective": solved.objective,
            "grid_gap_bound": bound,
            "within_bound": within,
        }),
        converged: oracle.termination == Termination::Converged
            && solved.termination == Termination::Converged,
    })
}
