use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lse_core::io::run::{checks_csv, field_summary, gating_failure, verify_field};
use lse_core::io::{load_config, read_field, run, Failure};

/// Variational solver for -Delta u + V(x) u = u log u^2 on a truncated box.
#[derive(Debug, Parser)]
#[command(name = "lse", version)]
struct Cli {
    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver described by a configuration file.
    Solve { config: PathBuf },
    /// Run the check registry on a stored field; prints checks CSV.
    Verify { field: PathBuf, config: PathBuf },
    /// Print the header and summary statistics of a field file.
    Info { field: PathBuf },
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{f}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { config } => {
            let mut spec = match load_config(&config) {
                Ok(s) => s,
                Err(e) => return fail(Failure::new("config", e.to_string())),
            };
            if let Some(dir) = cli.output_dir {
                spec.output_dir = dir;
            }
            let summary = run(&spec, cli.quiet);
            match summary.failure {
                Some(f) => fail(f),
                None => {
                    if !cli.quiet {
                        println!(
                            "{} solution(s) written to {}",
                            summary.solutions.len(),
                            spec.output_dir.display()
                        );
                    }
                    ExitCode::SUCCESS
                }
            }
        }
        Command::Verify { field, config } => {
            let spec = match load_config(&config) {
                Ok(s) => s,
                Err(e) => return fail(Failure::new("config", e.to_string())),
            };
            let (grid, u) = match read_field(&field) {
                Ok(x) => x,
                Err(e) => return fail(Failure::new("io", e.to_string())),
            };
            let checks = match verify_field(&spec, &grid, &u) {
                Ok(c) => c,
                Err(f) => return fail(f),
            };
            let rows: Vec<_> = checks.into_iter().map(|c| (1, c)).collect();
            print!("{}", checks_csv(&rows));
            match gating_failure(&rows) {
                Some(f) => fail(f),
                None => ExitCode::SUCCESS,
            }
        }
        Command::Info { field } => match read_field(&field) {
            Ok((grid, u)) => match field_summary(&grid, None, &u) {
                Ok(s) => {
                    println!("LSEF1 {s}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(Failure::new("io", e.to_string())),
            },
            Err(e) => fail(Failure::new("io", e.to_string())),
        },
    }
}
