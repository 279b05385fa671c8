use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qbsde_cli::scenario::SweepSection;
use qbsde_cli::{cmd_solve, cmd_sweep, cmd_verify, CliError, Overrides};

/// Solve and verify constrained utility maximization problems from scenario files.
///
/// Exit codes: 0 success, 1 output i/o error, 2 configuration error
/// (including an unreadable scenario file),
/// 3 solver failure, 4 verification violation.
#[derive(Parser)]
#[command(name = "qbsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override `numerics.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override `numerics.paths`.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Override `numerics.steps`.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Override `outputs.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward equation and write solution.csv.
    Solve { file: PathBuf },
    /// Solve, simulate the optimal strategy and perturbations, and write the report.
    Verify { file: PathBuf },
    /// Solve once per value of a scenario parameter and write sweep.csv.
    Sweep {
        file: PathBuf,
        /// Dotted parameter path, e.g. `constraints.investment.upper[0]`.
        #[arg(long, requires = "values")]
        param: Option<String>,
        /// Comma separated values; `inf` is allowed.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "param")]
        values: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        steps: cli.steps,
        out: cli.out,
    };
    match cli.command {
        Command::Solve { file } => {
            let (_, summary) = cmd_solve(&file, &overrides)?;
            print!("{summary}");
            Ok(0)
        }
        Command::Verify { file } => {
            let (report, summary) = cmd_verify(&file, &overrides)?;
            print!("{summary}");
            Ok(if report.violations().is_empty() { 0 } else { 4 })
        }
        Command::Sweep { file, param, values } => {
            let spec = param.zip(values).map(|(param, values)| SweepSection { param, values });
            let rows = cmd_sweep(&file, &overrides, spec)?;
            println!("{:>24} {:>24} {:>24}", "value", "Y_0", "analytic value");
            for r in rows {
                println!("{:>24} {:>24} {:>24}", r.value, r.y0, r.analytic_value);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
