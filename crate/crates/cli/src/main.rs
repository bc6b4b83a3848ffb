use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "pumpnet", version, about = "Plan and simulate pump-managed entanglement distribution networks")]
struct Cli {
    /// Run configuration (JSON): grid, model blocks, seed, output directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Model defaults file written by `pumpnet calibrate`.
    #[arg(long, global = true)]
    defaults: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Output {
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Analytic,
    Montecarlo,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum YieldCurve {
    /// log2(d) - 2 log2(d) e slope
    Linear,
    /// log2(d) - 2 (h(e) + e log2(d - 1))
    Qudit,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find a pump schedule covering a target topology.
    Plan {
        /// Problem file (JSON).
        problem: PathBuf,
        #[command(flatten)]
        output: Output,
        /// Search user placements jointly with pump sets (at most 6 users).
        #[arg(long)]
        exhaustive_alloc: bool,
        /// Placement limit for --exhaustive-alloc.
        #[arg(long, default_value_t = 200_000)]
        max_allocations: usize,
    },
    /// Measure a joint spectral intensity matrix.
    Jsi {
        /// Pump channels, e.g. `C39,C41`.
        #[arg(long)]
        pumps: String,
        /// Pump powers in mW, one per pump (default 2 mW each).
        #[arg(long)]
        powers: Option<String>,
        /// Channels to scan, e.g. `C30-C50` (default: pumps ± 10).
        #[arg(long)]
        channels: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Analytic)]
        mode: Mode,
        /// Required in Monte Carlo mode.
        #[arg(long)]
        seed: Option<u64>,
        /// Integration time per cell in seconds.
        #[arg(long)]
        integration: Option<f64>,
        /// Also write the time tags of one channel pair, e.g. `C39,C41`.
        #[arg(long)]
        dump_tags: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Link statistics and key rates for a verified plan.
    Network {
        /// Plan file written by `pumpnet plan`.
        plan: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Analytic)]
        mode: Mode,
        /// Required in Monte Carlo mode.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the time slice of every configuration (seconds).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long = "yield", value_enum, default_value_t = YieldCurve::Linear)]
        yield_curve: YieldCurve,
        #[command(flatten)]
        output: Output,
    },
    /// Check a plan against its problem from scratch.
    Verify {
        /// Plan file written by `pumpnet plan`.
        plan: PathBuf,
        /// Check against this problem instead of the one stored in the plan.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Fit the source model and write a defaults file.
    Calibrate {
        /// Calibration inputs (JSON); built-in inputs when omitted.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "defaults.json")]
        name: String,
        #[command(flatten)]
        output: Output,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Domain(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(2)
        }
    }
}
