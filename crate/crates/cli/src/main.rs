use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdfem_cli::{execute, Command, Overrides};

#[derive(Parser)]
#[command(name = "mdfem", version, about = "Measure-data degenerate elliptic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a mollification sequence on a fixed mesh.
    Solve(RunArgs),
    /// Refinement study with slope fits.
    Study(RunArgs),
    /// Muckenhoupt A2 diagnostics of the distance weight.
    A2(RunArgs),
    /// Caffarelli–Silvestre extension checks.
    CsCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Study(a) => (Command::Study, a),
        Cmd::A2(a) => (Command::A2, a),
        Cmd::CsCheck(a) => (Command::CsCheck, a),
    };
    let overrides = Overrides { out: args.out, threads: args.threads, seed: args.seed };
    ExitCode::from(execute(command, &args.config, &overrides) as u8)
}
