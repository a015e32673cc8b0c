use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smpc_cli::scenario::SnapshotSpec;
use smpc_cli::{cmd_bench, cmd_run, cmd_sweep, cmd_validate, CliError, Mode, Overrides, ScenarioFile};

#[derive(Parser)]
#[command(name = "smpc", version, about = "Sinkhorn MPC fleet simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: the scenario's output_dir, else out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    snapshots: Option<SnapshotSpec>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            snapshots: self.snapshots,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectories.csv, metrics.csv, summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Mode::Sinkhorn)]
        mode: Mode,
    },
    /// Steady states over an epsilon grid; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending grid (default: the scenario's sweep block).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        eps: Option<Vec<f64>>,
        /// Interpret the grid as multiples of the largest target-to-target cost.
        #[arg(long)]
        relative: bool,
    },
    /// Sinkhorn and Hungarian timings per fleet size; writes bench.csv.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Check a scenario file and print its canonical form.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, mode } => {
            let file = ScenarioFile::load(&common.scenario)?;
            cmd_run(&file, mode, &common.overrides())?;
        }
        Command::Sweep { common, eps, relative } => {
            let file = ScenarioFile::load(&common.scenario)?;
            cmd_sweep(&file, eps, relative.then_some(true), &common.overrides())?;
        }
        Command::Bench { common, sizes, eps } => {
            let file = ScenarioFile::load(&common.scenario)?;
            cmd_bench(&file, sizes, eps, &common.overrides())?;
        }
        Command::Validate { scenario } => {
            let file = ScenarioFile::load(&scenario)?;
            print!("{}", cmd_validate(&file)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
