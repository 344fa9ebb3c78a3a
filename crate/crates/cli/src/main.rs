//! `exphedge` command-line driver.
//!
//! Exit status: 0 success, 2 configuration error, 3 numerical failure
//! (unbounded or degenerate optimization), 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exphedge::experiment::{self, loglog_slope, median_errors, RunConfig};
use exphedge::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "exphedge",
    version,
    about = "Learn exponential-utility hedging strategies by Monte Carlo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, learn, evaluate and write every report artifact.
    Run { config: PathBuf },
    /// Learned price error against the closed form over N and seeds.
    Converge { config: PathBuf },
    /// Learn the Merton and claim strategies and print the prices.
    Price { config: PathBuf },
    /// Write the simulated training paths as CSV.
    Simulate { config: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let summary = experiment::run(&cfg)?;
            let p = &summary.prices;
            println!("wrote {}", cfg.output.display());
            println!("learned indifference price {:.6}", p.indifference_learned);
            println!("closed-form price          {:.6}", p.oracle);
            for c in &summary.cases {
                println!(
                    "{:<15} mean {:>8.4}  std {:>7.4}  n {}",
                    c.name, c.report.mean, c.report.std, c.report.n
                );
            }
        }
        Command::Converge { config } => {
            let cfg = load(&config)?;
            let rows = experiment::converge(&cfg)?;
            let medians = median_errors(&rows);
            for (n, e) in &medians {
                println!("N = {n:>8}  median |error| = {e:.6}");
            }
            if medians.len() > 1 {
                println!("log-log slope {:.3}", loglog_slope(&medians));
            }
        }
        Command::Price { config } => {
            let cfg = load(&config)?;
            let est = experiment::price(&cfg)?;
            println!("b0_merton_learned {:.8}", est.b0_merton);
            println!("b0_claim_learned {:.8}", est.b0_claim);
            println!("indifference_price_learned {:.8}", est.learned);
            println!("bs_oracle_price {:.8}", est.oracle);
        }
        Command::Simulate { config } => {
            let cfg = load(&config)?;
            let paths = experiment::simulate(&cfg)?;
            println!(
                "wrote {} paths x {} steps to {}",
                paths.n_paths(),
                paths.n_steps(),
                cfg.output.join("paths.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
