//! `magsync`: simulations, sideband and constraint analysis, stability and
//! phase diagrams from a JSON run configuration.
//!
//! Exit status is 0 on success, 2 for invalid input and 3 for numerical failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Output;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "magsync", version, about = "Mechanical-mode synchronization in cavity magnomechanics")]
struct Cli {
    /// JSON run configuration; every block is optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set params.g_ma=8e6` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// RNG seed for thermal initial states and noise; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensembles and diagrams; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// One trajectory: trajectory.csv, sync_observables.csv, steady_state.json.
    Simulate,
    /// Thermal-noise ensemble: histograms.csv, ensemble_phases.csv, ensemble_stats.json.
    Ensemble,
    /// Sideband backaction F(|B̃|): f_curve.csv.
    Sideband,
    /// Constraint roots over θ_− and the π-phase optimum: constraint_roots.csv, constraint.json.
    Constraint,
    /// Stationary loci against F(|B̃|): fs_locus.csv, f_curve.csv, intersections.json.
    Modulate,
    /// Fixed points and their spectra: fixed_points.json (and stability.json).
    Stability,
    /// Phase diagram over two parameters: diagram.csv, diagram.json, checkpoint.
    Diagram,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::Sideband => "sideband",
            Command::Constraint => "constraint",
            Command::Modulate => "modulate",
            Command::Stability => "stability",
            Command::Diagram => "diagram",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    let out = Output::new(&cli.out, cli.command.name(), &cfg)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Ensemble => commands::ensemble(&cfg, &out, cli.threads),
        Command::Sideband => commands::sideband(&cfg, &out),
        Command::Constraint => commands::constraint(&cfg, &out),
        Command::Modulate => commands::modulate(&cfg, &out),
        Command::Stability => commands::stability(&cfg, &out),
        Command::Diagram => commands::diagram(&cfg, &out, cli.threads),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<magsync::Error>() {
        Some(err) if !err.is_validation() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("magsync {}: {e:#}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
