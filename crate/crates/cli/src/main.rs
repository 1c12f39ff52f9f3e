use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robusttraj_cli::{evaluate_suf, refine, solve, sweep, CliError, EvaluateArgs, RefineArgs, SolveArgs, SweepArgs};

/// Robust trajectory planning for a legged mobile manipulator.
#[derive(Debug, Parser)]
#[command(name = "robusttraj", version)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a trajectory for one objective.
    Solve(SolveArgs),
    /// Per-knot disturbance rejection of a stored trajectory.
    EvaluateSuf(EvaluateArgs),
    /// Mean disturbance rejection over a range of a scenario parameter.
    Sweep(SweepArgs),
    /// Disturbance rejection error against a fine mesh.
    Refine(RefineArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(args) => {
            let out = solve(args)?;
            println!("{}", out.trajectory.display());
            println!("{}", out.manifest.display());
        }
        Command::EvaluateSuf(args) => {
            let s = evaluate_suf(args)?;
            if args.out.is_none() {
                std::io::stdout().write_all(&s.csv).map_err(anyhow::Error::from)?;
            }
            eprintln!("mean {:.6} N, std {:.6} N, {} flagged knots", s.mean, s.std, s.flagged);
        }
        Command::Sweep(args) => {
            sweep(args)?;
            println!("{}", args.out.display());
        }
        Command::Refine(args) => {
            refine(args)?;
            println!("{}", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
