use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stackelberg::runner::{self, Mode, Overrides};

/// Incentive Stackelberg LQ experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-based team gains, follower value and incentive matrix.
    Solve(RunArgs),
    /// Model-free learning of the team gains and the incentive matrix.
    Learn(RunArgs),
    /// Rollouts of team, attacked and incentive play.
    Simulate(RunArgs),
    /// Learn and simulate, with model-based references side by side.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `learner.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `solver.tol` and `learner.epsilon`.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides `solver.max_iters` and `learner.max_policy_iters`.
    #[arg(long)]
    max_iters: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Learn(a) => (Mode::Learn, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    let overrides = Overrides {
        mode: Some(mode),
        seed: args.seed,
        tol: args.tol,
        max_iters: args.max_iters,
    };
    let result = runner::load_config(&args.config, &overrides).and_then(|cfg| runner::run(&cfg, &args.out));
    match result {
        Ok(_) => {
            println!("{} finished; report in {}", mode.name(), args.out.join(runner::REPORT_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
