use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use pnp_cli::commands;
use pnp_cli::config::{ConventionName, ExcessName, InvalidInput, MonitorName, Param, RunConfig};
use pnp_core::PnpError;

/// Steady Poisson-Nernst-Planck fluxes through a narrow channel.
#[derive(Debug, Parser)]
#[command(name = "pnpflux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration (JSON when the file ends in .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Threads for grid evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    monitor: Option<MonitorName>,
    #[arg(long = "charge-convention", global = true, value_enum)]
    charge_convention: Option<ConventionName>,
    #[arg(long, global = true, value_enum)]
    excess: Option<ExcessName>,
    /// Single charge value `q0 = 2 Q0`, replacing the configured one.
    #[arg(long, global = true, allow_hyphen_values = true)]
    q0: Option<f64>,
    /// Single applied voltage, replacing the configured one.
    #[arg(long, global = true, allow_hyphen_values = true)]
    voltage: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one point and write profiles, element fluxes and a summary.
    Solve,
    /// Flux ratios along a range of q0 or of V.
    Sweep,
    /// Flux-ratio surface, region labels, unit contours and their turning points.
    Diagram,
    /// Closed-form small- and large-charge quantities.
    Asymptotics,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let p = &mut config.problem;
    if let Some(m) = cli.monitor {
        p.monitor = m;
    }
    if let Some(c) = cli.charge_convention {
        p.charge_convention = c;
    }
    if let Some(e) = cli.excess {
        p.excess = e;
    }
    if let Some(q) = cli.q0 {
        p.q0 = Param::Value(q);
    }
    if let Some(v) = cli.voltage {
        p.voltage = Param::Value(v);
    }
    if let Some(dir) = &cli.out {
        config.output.dir = dir.clone();
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(InvalidInput("--workers must be >= 1".into()).into());
        }
        config.output.workers = Some(w);
    }
    Ok(config)
}

fn workers(config: &RunConfig) -> usize {
    config
        .output
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(cli: &Cli) -> Result<commands::Report> {
    let config = load(cli)?;
    match cli.command {
        Command::Solve => commands::solve(&config),
        Command::Sweep => commands::sweep(&config, workers(&config)),
        Command::Diagram => commands::diagram(&config, workers(&config)),
        Command::Asymptotics => commands::asymptotics(&config),
    }
}

/// 1 for bad input, 2 for solver failures.
fn exit_status(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<InvalidInput>()) {
        return 1;
    }
    match e.downcast_ref::<PnpError>().map(PnpError::root_cause) {
        Some(PnpError::Validation { .. } | PnpError::Degenerate(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            if report.failures > 0 {
                eprintln!("{} points failed", report.failures);
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
