use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfg::{run, Command, RunOptions};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// Solve the MFG fixed point.
    Solve,
    /// Riccati solution of an LQ spec.
    LqOracle,
    /// Deviation sweep in the N-player game.
    NashGap,
    /// Coupled N-player system against decoupled copies.
    Chaos,
    /// Empirical-measure W2 rate.
    WassersteinRate,
    /// Check the config and the model assumptions.
    Validate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::LqOracle => Command::LqOracle,
            Cmd::NashGap => Command::NashGap,
            Cmd::Chaos => Command::Chaos,
            Cmd::WassersteinRate => Command::WassersteinRate,
            Cmd::Validate => Command::Validate,
        }
    }
}

/// Mean-field game solver and verification toolkit.
///
/// Exit codes: 0 success, 2 invalid input, 3 solver did not converge
/// (artifacts are still written), 1 other failures.
#[derive(Debug, Parser)]
#[command(name = "mfg", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run directory (default `runs/<command>`); an existing one gets a `-k` suffix.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Only print the run directory.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        quiet: cli.quiet,
    };
    let outcome = run(cli.command.into(), &opts);
    if let Some(dir) = &outcome.run_dir {
        println!("{}", dir.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
