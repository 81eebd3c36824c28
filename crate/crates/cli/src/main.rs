//! `msenkf`: synthetic data generation, inversion and verification studies.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "msenkf", version, about = "Ensemble Kalman inversion for multiscale elliptic problems")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic flux observations from the fine-mesh model.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write the noise-free fluxes as the data.
        #[arg(long)]
        noiseless: bool,
    },
    /// Ensemble Kalman inversion against an observation file.
    Invert {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Observation CSV (`index,value`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ForwardArg::Surrogate)]
        forward: ForwardArg,
        /// Precomputed effective-tensor table.
        #[arg(long)]
        homog_table: Option<PathBuf>,
        /// Fail instead of extending the table when a parameter leaves its range.
        #[arg(long)]
        strict_range: bool,
        /// Also write every intermediate ensemble.
        #[arg(long)]
        snapshot: bool,
    },
    /// Verification studies.
    Study {
        #[arg(long, value_enum)]
        kind: StudyKind,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the effective tensor over the parameter range.
    HomogTable {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Cell mesh subdivisions per side.
        #[arg(long, default_value_t = 128)]
        n_cell: usize,
        /// Table points.
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Offline modelling-error mean and covariance.
    ModelErrorEstimate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
        /// Sample count (defaults to N_E from the configuration).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        homog_table: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    model_error: Option<ModelErrorArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Point,
    Bayes,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelErrorArg {
    None,
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ForwardArg {
    Surrogate,
    Multiscale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StudyKind {
    FemRate,
    HomogRate,
    WassersteinBound,
    Hoeffding,
    BayesLinear,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
