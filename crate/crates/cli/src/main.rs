//! `stereokin`: simulation, fitting and analysis of two-body loss in a
//! layered gas of polar molecules.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    pub fn not_converged(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl From<stereokin::Error> for CliError {
    fn from(e: stereokin::Error) -> Self {
        use stereokin::Error as E;
        match e {
            E::StepUnderflow { .. } | E::Integration(_) | E::RankDeficient { .. } => CliError::numerical(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthetic noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; a `<out>.manifest.json` is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Collision channel 1, 2 or 3.
    #[arg(long, global = true, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub channel: u8,
    #[arg(long, global = true, value_enum, default_value = "3d")]
    pub mode: Mode,
}

#[derive(Debug, Parser)]
#[command(name = "stereokin", version, about = "Two-body loss kinetics and stereodynamics toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the level-resolved loss equations.
    Simulate(commands::SimulateArgs),
    /// Fit rate constants to measured loss curves.
    Fit(commands::FitArgs),
    /// Rate constant of one channel along a grid of induced dipoles.
    ScanDipole(commands::ScanArgs),
    /// Thermal or parametrically heated level populations.
    Occupancy(commands::OccupancyArgs),
    /// Layer stack and 2D densities of the cloud.
    Cloud(commands::CloudArgs),
    /// Allowed collision channels of a molecule pair.
    Channels(commands::ChannelsArgs),
    /// Extract zone populations from a band-mapping image or trace.
    Bandmap(commands::BandmapArgs),
}

fn init_threads() {
    if let Some(n) = std::env::var("STEREOKIN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Fit(a) => commands::fit(g, a),
        Command::ScanDipole(a) => commands::scan_dipole(g, a),
        Command::Occupancy(a) => commands::occupancy(g, a),
        Command::Cloud(a) => commands::cloud(g, a),
        Command::Channels(a) => commands::channels(g, a),
        Command::Bandmap(a) => commands::bandmap(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
