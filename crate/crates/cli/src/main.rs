mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmlkit::DmlError;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "dmlkit", version, about = "Cross-fitted orthogonal-moment estimation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; replaces any explicit seed list in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one score with repeated cross-fitting and median aggregation.
    Estimate,
    /// Group-time ATTs on a staggered panel plus event-time aggregates.
    Attgt,
    /// Candidate learner comparison and an orthogonality check.
    Diagnose,
    /// Monte Carlo study on a calibrated design.
    Simulate,
    /// Configuration helpers.
    Config {
        /// Print the full default configuration as JSON.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Write demo datasets and example configs.
    Generate {
        #[arg(default_value = "data")]
        dir: PathBuf,
    },
}

fn exit_code(err: &DmlError) -> u8 {
    match err {
        DmlError::Config(_) | DmlError::Argument(_) | DmlError::Json(_) => 2,
        DmlError::Schema(_)
        | DmlError::Parse { .. }
        | DmlError::Validation(_)
        | DmlError::Io(_)
        | DmlError::Csv(_) => 3,
        DmlError::Identification(_) | DmlError::Numerical(_) => 4,
    }
}

fn load_config(cli: &Cli) -> dmlkit::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
        cfg.seeds = None;
        cfg.simulation.monte_carlo.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> dmlkit::Result<()> {
    match &cli.command {
        Command::Config { print_defaults } => {
            if *print_defaults {
                commands::print_defaults()
            } else {
                let cfg = load_config(cli)?;
                cfg.check()?;
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                Ok(())
            }
        }
        Command::Generate { dir } => commands::generate(dir, cli.seed.unwrap_or(20240917)),
        Command::Estimate => commands::estimate(&load_config(cli)?),
        Command::Attgt => commands::attgt(&load_config(cli)?),
        Command::Diagnose => commands::diagnose(&load_config(cli)?),
        Command::Simulate => commands::simulate(&load_config(cli)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(DmlError::Config(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
