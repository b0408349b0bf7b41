use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{CliError, Outcome};

/// Discounted forward-reachable-tube solver, invariance checks and safety
/// filter experiments.
#[derive(Debug, Parser)]
#[command(name = "frt-reach", version, about)]
struct Cli {
    /// Directory for written artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for randomized steps (contraction pairs, Lipschitz sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one formulation for the first target of a config file.
    Solve(commands::SolveArgs),
    /// Compare a value field with a set and check its barrier constraint.
    Check(commands::CheckArgs),
    /// Pendulum safety filter: one simulation with `--value`, otherwise the
    /// full kernel, smoothing, tube and batch study.
    Pendulum(commands::PendulumArgs),
    /// Four formulations on the one-dimensional example.
    #[command(name = "compare-1d")]
    Compare1d,
    /// Forward tubes of the four double-integrator sets.
    #[command(name = "di-frt")]
    DiFrt(commands::DiArgs),
    /// Contraction, inverse optimality and cross-engine checks.
    Properties,
    /// Run the stages named in a config file.
    Run {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = commands::Context { out_dir: cli.out_dir, seed: cli.seed };
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&ctx, &a),
        Command::Check(a) => commands::check(&ctx, &a),
        Command::Pendulum(a) => commands::pendulum(&ctx, &a),
        Command::Compare1d => commands::compare_1d(&ctx),
        Command::DiFrt(a) => commands::di_frt(&ctx, &a),
        Command::Properties => commands::properties(&ctx),
        Command::Run { config } => commands::run(&ctx, &config),
    };
    match result {
        Ok(Outcome { report, passed }) => {
            print!("{report}");
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_divergence() => 3,
            CliError::Run(e) if e.is_config_error() => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use frt_reach::cli_io::{ConfigError, RunError};
    use frt_reach::solver::SolveError;

    #[test]
    fn exit_codes() {
        let code = |e: RunError| CliError::Run(e).exit_code();
        assert_eq!(code(RunError::Config(ConfigError::MissingSection("grid"))), 2);
        assert_eq!(code(RunError::Solve(SolveError::InvalidParams("cfl".into()))), 2);
        assert_eq!(code(RunError::Solve(SolveError::Divergence { iteration: 4, residual: 9.0, initial: 0.1 })), 3);
        assert_eq!(code(RunError::Solve(SolveError::ContractionViolated { iteration: 12, ratio: 1.2, bound: 1.0 })), 3);
        assert_eq!(code(RunError::Solve(SolveError::GridMismatch)), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}
