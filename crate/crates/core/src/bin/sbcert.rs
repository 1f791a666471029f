use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbcert::cli;

#[derive(Parser)]
#[command(name = "sbcert", version, about = "Safety barrier certificates for quadrotor teams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace archive.
    Simulate {
        /// Built-in scenario name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        /// Output directory for the archive.
        #[arg(long)]
        out: PathBuf,
        /// Override a configuration value, e.g. `--set ks=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Control period in seconds.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Re-audit a stored trace archive.
    Audit {
        /// Archive directory written by `simulate`.
        #[arg(long)]
        trace: PathBuf,
        /// Override limits, e.g. `--set max_tilt=30`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Print a JSON report.
        #[arg(long)]
        json: bool,
    },
    /// Run the randomized verification harness.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        json: bool,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    let status = match args.command {
        Command::Simulate { scenario, out: dir, set, dt } => cli::cmd_simulate(&scenario, &dir, &set, dt, &mut out, &mut err),
        Command::Audit { trace, set, json } => cli::cmd_audit(&trace, &set, json, &mut out, &mut err),
        Command::Verify { seed, trials, json } => cli::cmd_verify(seed, trials, json, &mut out, &mut err),
        Command::ListScenarios => cli::cmd_list_scenarios(&mut out),
    };
    ExitCode::from(status.code() as u8)
}
