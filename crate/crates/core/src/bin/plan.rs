use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use severity_planner::runner::{self, RunArtifacts, RunOptions};
use severity_planner::scenario::{builtin, parse_scenario, Scenario};
use severity_planner::Error;

/// Minimum-collision-severity trajectory planner.
///
/// Exit codes: 0 converged, 2 solver diagnostics (not converged or budget
/// missed), 1 input errors.
#[derive(Parser)]
#[command(name = "plan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Output directory for the CSVs and summary.
    #[arg(long)]
    out: PathBuf,
    /// Absolute slack on the level-two severity budget.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of control intervals.
    #[arg(long)]
    intervals: Option<usize>,
    /// Rating setting (1 or 2).
    #[arg(long)]
    setting: Option<u8>,
    /// Also write per-iteration solver traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Solve a built-in scenario (scenario1, scenario2, scenario2-cond2).
    Builtin {
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Compare two run directories; prints JSON.
    Compare { a: PathBuf, b: PathBuf },
}

fn load_file(path: &Path) -> Result<Scenario, Error> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

fn solve(scenario: Scenario, args: RunArgs) -> Result<ExitCode, Error> {
    let options = RunOptions {
        epsilon: args.epsilon,
        intervals: args.intervals,
        setting: args.setting,
        trace: args.trace,
        ..RunOptions::default()
    };
    let outcome = runner::run(&scenario, &args.out, &options)?;
    let s = &outcome.summary;
    println!(
        "{}: J1* = {:.6e}, J1(z2) = {:.6e}, J2 = {:.6e} -> {:.6e}, level 1 {}, level 2 {}, budget {}, {:.2} s",
        s.scenario,
        s.j1_star,
        s.j1_at_z2,
        s.j2_level1,
        s.j2_level2,
        s.level1.status,
        s.level2.status,
        if s.budget_satisfied { "met" } else { "missed" },
        s.wall_time_seconds
    );
    Ok(ExitCode::from(runner::exit_code(s) as u8))
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { scenario, args } => solve(load_file(&scenario)?, args),
        Command::Builtin { name, args } => solve(builtin(&name)?, args),
        Command::Compare { a, b } => {
            let cmp = runner::compare(&RunArtifacts::load(&a)?, &RunArtifacts::load(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&cmp).expect("comparison serializes"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
