//! `popgrid` command-line pipeline: clip, zonal statistics, facility needs,
//! charts, and the population model's simulate/fit/predict steps.

pub mod chart;
pub mod commands;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use chart::{render_bar_chart, ChartError};
pub use commands::{load_manifest, run, Job, Manifest};
pub use error::{Category, CliError, USAGE_EXIT};

#[derive(Debug, Parser)]
#[command(name = "popgrid", version, args_conflicts_with_subcommands = true, about = "Ward-level population estimates and facility needs from gridded population data")]
pub struct Cli {
    /// Replay the run recorded in a `<command>_manifest.json`
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for a replayed run (defaults to the recorded one)
    #[arg(long, requires = "manifest")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Null raster cells outside a polygon mask
    Clip(commands::ClipArgs),
    /// Per-ward count, sum and mean of a population raster
    Zonal(commands::ZonalArgs),
    /// Public-toilet needs per ward from a zonal CSV
    Needs(commands::NeedsArgs),
    /// Bar chart of one CSV column
    Chart(commands::ChartArgs),
    /// Simulate a microcensus dataset from random true parameters
    Simulate(commands::SimulateArgs),
    /// Sample the model posterior for a microcensus dataset
    Fit(commands::FitArgs),
    /// Posterior-predictive populations for new locations
    Predict(commands::PredictArgs),
}

impl From<Command> for Job {
    fn from(c: Command) -> Self {
        match c {
            Command::Clip(a) => Job::Clip(a),
            Command::Zonal(a) => Job::Zonal(a),
            Command::Needs(a) => Job::Needs(a),
            Command::Chart(a) => Job::Chart(a),
            Command::Simulate(a) => Job::Simulate(a),
            Command::Fit(a) => Job::Fit(a),
            Command::Predict(a) => Job::Predict(a),
        }
    }
}

/// Parses arguments, runs the job, and returns the process exit code.
/// Diagnostics go to stderr; the manifest path goes to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let job = match (cli.manifest, cli.command) {
        (Some(path), _) => match load_manifest(&path) {
            Ok(mut job) => {
                if let Some(out) = cli.out {
                    job.set_out_dir(out);
                }
                job
            }
            Err(e) => {
                eprintln!("{}", e.line());
                return e.exit_code();
            }
        },
        (None, Some(cmd)) => cmd.into(),
        (None, None) => {
            eprintln!("usage: popgrid <COMMAND> [OPTIONS], or popgrid --manifest <FILE>; see --help");
            return USAGE_EXIT;
        }
    };
    match run(&job) {
        Ok(m) => {
            println!("{}", job.out_dir().join(m.outputs.last().expect("manifest is listed")).display());
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
