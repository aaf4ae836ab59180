//! `voltvar`: run closed-loop Volt/VAr experiments from the command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 simulation failure.

mod plot;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use voltvar_core::sim::{self, Scenario, SimulationLog, Strategy, SweepParam, XSource};
use voltvar_core::FeederModel;

#[derive(Parser)]
#[command(
    name = "voltvar",
    version,
    about = "Closed-loop Volt/VAr control experiments on a radial feeder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its log, metrics and plot.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        controller: ControllerArgs,
    },
    /// Run droop, OPF (exact and perturbed model) and FO (stored and all-ones X)
    /// on the same scenario and tabulate the metrics.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Repeat a scenario over several values of one parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        controller: ControllerArgs,
        /// alpha, noise_stddev or x_perturbation
        #[arg(long)]
        param: String,
        /// Comma-separated values
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Feeder definition (TOML); overrides the scenario's feeder
    #[arg(long)]
    feeder: Option<PathBuf>,
    /// Scenario definition (TOML); the built-in canonical scenario by default
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Measurement noise standard deviation, p.u.
    #[arg(long, allow_hyphen_values = true)]
    noise_std: Option<f64>,
    /// Measurement noise seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ControllerArgs {
    /// fo, droop or opf
    #[arg(long)]
    strategy: Option<String>,
    /// FO dual step size
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// computed, paper, ones or file:PATH
    #[arg(long)]
    x_source: Option<String>,
}

enum Failure {
    Config(anyhow::Error),
    Simulation(anyhow::Error),
}

impl Failure {
    fn sim(e: impl Into<anyhow::Error>) -> Self {
        Self::Simulation(e.into())
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes count as configuration errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, controller } => cmd_run(&config, &controller),
        Command::Compare { config } => cmd_compare(&config),
        Command::Sweep {
            config,
            controller,
            param,
            values,
        } => cmd_sweep(&config, &controller, &param, &values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Simulation(e)) => {
            eprintln!("simulation failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Loads and fully validates the scenario and feeder.
fn load(
    config: &ConfigArgs,
    controller: Option<&ControllerArgs>,
) -> anyhow::Result<(Scenario, FeederModel)> {
    let mut scenario = match &config.scenario {
        Some(path) => {
            Scenario::load(path).with_context(|| format!("scenario {}", path.display()))?
        }
        None => Scenario::canonical(),
    };
    if let Some(path) = &config.feeder {
        scenario.feeder = Some(path.clone());
    }
    if let Some(s) = config.noise_std {
        scenario.noise.stddev = s;
    }
    if let Some(seed) = config.seed {
        scenario.noise.seed = seed;
    }
    if let Some(c) = controller {
        if let Some(s) = &c.strategy {
            scenario.controller.strategy = s.parse::<Strategy>()?;
        }
        if let Some(a) = c.alpha {
            scenario.controller.alpha = a;
        }
        if let Some(x) = &c.x_source {
            scenario.controller.x_source = x.parse::<XSource>()?;
        }
    }
    scenario.validate()?;
    let model = sim::load_feeder(&scenario).context("feeder")?;
    scenario.validate_against(&model)?;
    Ok((scenario, model))
}

/// Called once everything is validated; nothing is written before.
fn prepare_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Simulation)
}

/// Writes `<stem>.csv` and `<stem>.svg`.
fn write_log(
    out: &Path,
    stem: &str,
    log: &SimulationLog,
    scenario: &Scenario,
    title: &str,
) -> Result<(), Failure> {
    write(&out.join(format!("{stem}.csv")), &log.to_csv_string())?;
    write(
        &out.join(format!("{stem}.svg")),
        &plot::render_log(log, &scenario.limits, title),
    )
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_run(config: &ConfigArgs, controller: &ControllerArgs) -> Result<(), Failure> {
    let (scenario, model) = load(config, Some(controller))?;
    prepare_out(&config.out)?;
    let log = sim::run(&scenario, &model).map_err(Failure::sim)?;
    let stem = file_stem(&format!(
        "{}_{}",
        scenario.name,
        scenario.controller.strategy.as_str()
    ));
    write_log(&config.out, &stem, &log, &scenario, &stem)?;
    let failure = log
        .failure
        .as_ref()
        .map(|f| format!("power flow failed at {} s: {}", f.time_s, f.message));
    if !log.records.is_empty() {
        let m = sim::violation_metrics(&log, &scenario.limits).map_err(Failure::sim)?;
        let text = report::metrics_text(
            &scenario.name,
            scenario.controller.strategy.as_str(),
            &m,
            failure.as_deref(),
        );
        write(&config.out.join(format!("{stem}_metrics.txt")), &text)?;
        print!("{text}");
    }
    match failure {
        Some(f) => Err(Failure::Simulation(anyhow!(f))),
        None => Ok(()),
    }
}

fn cmd_compare(config: &ConfigArgs) -> Result<(), Failure> {
    let (scenario, model) = load(config, None)?;
    prepare_out(&config.out)?;
    let comparison = sim::compare(&scenario, &model);
    for row in &comparison.rows {
        if let Some(log) = &row.log {
            let stem = file_stem(&format!("compare_{}", row.label));
            write_log(&config.out, &stem, log, &scenario, &row.label)?;
        }
    }
    let table = report::comparison_table(&comparison);
    write(&config.out.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep(
    config: &ConfigArgs,
    controller: &ControllerArgs,
    param: &str,
    values: &[f64],
) -> Result<(), Failure> {
    let param: SweepParam = param.parse()?;
    let (scenario, model) = load(config, Some(controller))?;
    // every value is checked before any run starts
    for &v in values {
        let mut s = scenario.clone();
        param.apply(&mut s, v);
        s.validate()
            .with_context(|| format!("{}={v}", param.as_str()))?;
    }
    prepare_out(&config.out)?;
    let rows = sim::sweep(&scenario, &model, param, values)?;
    for row in &rows {
        if let Some(log) = &row.summary.log {
            let stem = file_stem(&format!("sweep_{}_{}", param.as_str(), row.value));
            write_log(&config.out, &stem, log, &scenario, &row.summary.label)?;
        }
    }
    let table = report::sweep_table(param.as_str(), &rows);
    write(
        &config.out.join(format!("sweep_{}.txt", param.as_str())),
        &table,
    )?;
    print!("{table}");
    Ok(())
}
