mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redlab_core::experiments::{manifest, reproduce_table, sweep_mean_jobs, write_sweep_csv, ExperimentError};
use redlab_core::fluid::{ub_drain_schedule, FluidError};
use redlab_core::sim::{self, SimConfig, SimError};
use redlab_core::StabilityReport;

use config::{Block, Config, ConfigError};

#[derive(Parser)]
#[command(name = "redlab", version, about = "Stability analysis and simulation of redundancy systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stability report of a topology as JSON.
    Stability {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the mean number of jobs; prints JSON.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Record copies per server after every event up to the horizon; writes CSV.
    Trajectory {
        config: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Upper-bound fluid drain schedule; writes CSV.
    Fluid {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute a stability table (2, 3 or 4); writes CSV.
    Table {
        #[arg(value_parser = clap::value_parser!(u32).range(2..=4))]
        id: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a parameter sweep; writes CSV.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct Common {
    /// Override the arrival rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    busy_periods: Option<u64>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Dominance(m) => Failure::Runtime(m),
        other => Failure::Config(format!("sim: {other}")),
    }
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Spec(_) | ExperimentError::Model(_) | ExperimentError::UnknownTable(_) => {
            Failure::Config(e.to_string())
        }
        ExperimentError::Sim(SimError::Config(m)) => Failure::Config(format!("sweep: {m}")),
        other => Failure::Runtime(other.to_string()),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// `path` with `suffix` appended to its file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn check_lambda(lambda: Option<f64>) -> Result<(), Failure> {
    match lambda {
        Some(l) if !(l >= 0.0 && l.is_finite()) => Err(Failure::Config(format!("--lambda: must be nonnegative, got {l}"))),
        _ => Ok(()),
    }
}

fn sim_config(cfg: &Config, common: &Common, seed: Option<u64>, busy: Option<u64>) -> Result<SimConfig, Failure> {
    check_lambda(common.lambda)?;
    let mut sc = cfg.sim_config()?;
    if let Some(l) = common.lambda {
        sc.topology.lambda = l;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(b) = busy {
        sc.busy_periods = b;
    }
    sc.validate().map_err(sim_failure)?;
    Ok(sc)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Stability { config, common } => {
            check_lambda(common.lambda)?;
            let cfg = Config::load(&config)?;
            cfg.expect_blocks("stability", &[Block::Sim])?;
            let mut top = cfg.topology()?;
            if let Some(l) = common.lambda {
                top.lambda = l;
            }
            let report = StabilityReport::with_service(&top, &cfg.service()?);
            emit(common.out.as_deref(), format!("{}\n", report.to_json()).as_bytes())
        }
        Command::Simulate { config, common, run } => {
            let cfg = Config::load(&config)?;
            cfg.expect_blocks("simulate", &[Block::Sim])?;
            let sc = sim_config(&cfg, &common, run.seed, run.busy_periods)?;
            let res = sim::run(&sc).map_err(sim_failure)?;
            emit(common.out.as_deref(), format!("{}\n", res.to_json()).as_bytes())
        }
        Command::Trajectory { config, horizon, common, seed } => {
            if !(horizon > 0.0 && horizon.is_finite()) {
                return Err(Failure::Config(format!("--horizon: must be positive, got {horizon}")));
            }
            let cfg = Config::load(&config)?;
            cfg.expect_blocks("trajectory", &[Block::Sim])?;
            let sc = sim_config(&cfg, &common, seed, None)?;
            let res = sim::run_trajectory(&sc, horizon).map_err(sim_failure)?;
            let mut buf = Vec::new();
            res.trajectory.unwrap_or_default().write_csv(&mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(common.out.as_deref(), &buf)
        }
        Command::Fluid { config, common } => {
            check_lambda(common.lambda)?;
            let cfg = Config::load(&config)?;
            cfg.expect_blocks("fluid", &[Block::Fluid])?;
            let mut top = cfg.topology()?;
            if let Some(l) = common.lambda {
                top.lambda = l;
            }
            let block = cfg.fluid()?;
            let traj = ub_drain_schedule(&top, &block.service, &block.initial_mass, block.horizon).map_err(|e| match e {
                FluidError::Stage(m) => Failure::Runtime(m.to_string()),
                other => Failure::Config(format!("fluid: {other}")),
            })?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(common.out.as_deref(), &buf)?;
            let events = serde_json::to_string_pretty(&traj.drain_events).expect("events serialize");
            match &common.out {
                Some(path) => emit(Some(&sidecar(path, ".drain_events.json")), format!("{events}\n").as_bytes()),
                None => {
                    eprintln!("{}", serde_json::to_string(&traj.drain_events).expect("events serialize"));
                    Ok(())
                }
            }
        }
        Command::Table { id, out } => {
            let table = reproduce_table(id).map_err(experiment_failure)?;
            emit(out.as_deref(), table.to_csv_string().as_bytes())?;
            if let Some(path) = out {
                let m = manifest("table", serde_json::json!({ "table": id }), &[]);
                emit(Some(&sidecar(&path, ".manifest.json")), format!("{m:#}\n").as_bytes())?;
            }
            Ok(())
        }
        Command::Sweep { config, common, run } => {
            check_lambda(common.lambda)?;
            let cfg = Config::load(&config)?;
            cfg.expect_blocks("sweep", &[Block::Sweep])?;
            let mut spec = cfg.sweep()?;
            if let Some(l) = common.lambda {
                spec.lambdas = vec![l];
            }
            if let Some(s) = run.seed {
                spec.seed = s;
            }
            if let Some(b) = run.busy_periods {
                spec.busy_periods = b;
            }
            let rows = sweep_mean_jobs(&spec).map_err(experiment_failure)?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf).map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(common.out.as_deref(), &buf)?;
            if let Some(path) = &common.out {
                let spec_json = serde_json::to_value(&spec).expect("spec serializes");
                let m = manifest("sweep", spec_json, &[spec.seed]);
                emit(Some(&sidecar(path, ".manifest.json")), format!("{m:#}\n").as_bytes())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
