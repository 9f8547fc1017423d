use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgraph::scenario::{
    bundled, parse_config, run_scenario, run_sweep, write_sweep, ConfigError, Scenario, ScenarioError,
    Status, SweepSpec, DEFAULT_MEASURE_TIME,
};

/// Wave packets on quantum graphs with transparent vertices and ends.
#[derive(Parser)]
#[command(name = "qgraph", version)]
struct Cli {
    /// Time at which the reflection coefficient R is reported.
    #[arg(long, global = true)]
    measure_time: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter and tabulate R.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// e.g. bond.1.alpha
        #[arg(long)]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        min: f64,
        #[arg(long, allow_negative_numbers = true)]
        max: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Three-bond star with sum-rule weights.
    DemoStar {
        #[arg(long)]
        out: PathBuf,
    },
    /// Three-layer tree with sum-rule weights at every vertex.
    DemoTree {
        #[arg(long)]
        out: PathBuf,
    },
    /// Free line with transparent ends, checked against free motion.
    OracleLine {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_config(&text)?)
}

fn load_bundled(name: &str) -> Result<Scenario, ScenarioError> {
    let text = bundled(name).expect("bundled scenario exists");
    Ok(parse_config(text)?)
}

fn measured(scenario: Scenario, t: Option<f64>) -> Result<Scenario, ScenarioError> {
    match t {
        Some(t) => Ok(scenario.with_measure_time(t)?),
        None => Ok(scenario),
    }
}

fn run_and_report(scenario: Scenario, out: &Path) -> Result<(), ScenarioError> {
    let report = run_scenario(&scenario, out)?;
    let m = &report.manifest;
    println!("scenario {}: {} steps", m.scenario, m.steps);
    if let Some(r) = &m.measurement {
        println!("R(t={}) = {}", r.t, r.reflection);
    }
    for c in &m.transparency_checks {
        println!(
            "vertex {} from bond {}: sum rule residual {:e}, plane-wave r = {}",
            c.vertex, c.incoming, c.sum_rule_residual, c.plane_wave_reflection
        );
    }
    if let Some(o) = &m.free_oracle {
        println!(
            "envelope error at t={}: {:e}; residual norm at t={}: {:e}",
            o.envelope_time,
            o.envelope_error,
            report.result.final_field.t,
            o.residual_norm
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run { config, out } => run_and_report(measured(load(&config)?, cli.measure_time)?, &out),
        Command::DemoStar { out } => run_and_report(measured(load_bundled("star3_fig2")?, cli.measure_time)?, &out),
        Command::DemoTree { out } => run_and_report(measured(load_bundled("tree_r0")?, cli.measure_time)?, &out),
        Command::OracleLine { out } => {
            run_and_report(measured(load_bundled("line_oracle")?, cli.measure_time)?, &out)
        }
        Command::Sweep { config, param, min, max, steps, out } => {
            let base = load(&config)?;
            let spec = SweepSpec {
                param,
                min,
                max,
                steps,
                measure_time: cli.measure_time.unwrap_or(DEFAULT_MEASURE_TIME),
            };
            let started = chrono::Utc::now().to_rfc3339();
            let table = run_sweep(&spec, &base)?;
            write_sweep(&table, &base, started, &out)?;
            for row in &table.rows {
                match &row.error {
                    None => println!("{} = {}: R = {}", table.label, row.value, row.reflection),
                    Some(e) => println!("{} = {}: failed ({e})", table.label, row.value),
                }
            }
            match table.argmin_row() {
                Some(row) => println!("argmin {} = {} with R = {}", table.label, row.value, row.reflection),
                None => println!("no sweep point succeeded"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let ScenarioError::Config(ConfigError::Invalid(problems)) = &e {
                for p in problems {
                    eprintln!("  - {p}");
                }
            }
            let status: Status = e.status();
            ExitCode::from(status.exit_code() as u8)
        }
    }
}
