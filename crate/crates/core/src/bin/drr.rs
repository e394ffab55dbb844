use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drr_core::cli::{self, CliError};
use drr_core::sim::RunMode;

#[derive(Parser)]
#[command(name = "drr", version, about = "Collision recovery and replanning simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write per-trial logs plus a report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Drr)]
        mode: ModeArg,
    },
    /// Convert a JSON-lines step log to CSV.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Print the maximum safe approach speed for the scenario's robot.
    Vmax {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Drr,
    Preplanned,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Drr => RunMode::Drr,
            ModeArg::Preplanned => RunMode::Preplanned,
        }
    }
}

/// Prints a line to stdout. A closed pipe (e.g. `drr run ... | head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Io(PathBuf::from("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, trials, seed, out, mode } => {
            let sc = cli::parse_scenario(&scenario)?;
            let trials = trials.unwrap_or(sc.trials);
            let report = cli::run(&sc, trials, seed.unwrap_or(sc.seed), mode.into(), Some(&out))?;
            emit(&serde_json::to_string_pretty(&report).expect("report serializes"))?;
            let failed = report.failed();
            if failed > 0 {
                log::error!("{failed} of {trials} trials failed");
                return Err(CliError::Simulation(drr_core::sim::SimError::InvalidScenario(format!(
                    "{failed} of {trials} trials failed"
                ))));
            }
            Ok(())
        }
        Command::Export { log, csv } => {
            let rows = cli::export_csv(&log, &csv)?;
            log::info!("wrote {rows} rows to {}", csv.display());
            Ok(())
        }
        Command::Vmax { scenario } => {
            emit(&cli::vmax(&scenario)?.to_string())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRR_LOG_LEVEL", "error")).init();
    let args = Args::parse();
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
