use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use magloop_cli::{error_summary, load_config, run, Command, Overrides};

/// Closed-loop spin magnetometer: synthesis, simulation and identification.
#[derive(Debug, Parser)]
#[command(name = "magloop", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
    /// Scenario configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the logical CPU count.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Design the controller and write its Bode data.
    Synthesize,
    /// Run the loop and write the time record.
    Simulate,
    /// Swept-sine identification and rational fit.
    Identify,
    /// Atom-number robustness sweep.
    Sweep,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors share exit code 1 with config errors; 2 is reserved
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cmd = match args.cmd {
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Simulate => Command::Simulate,
        Cmd::Identify => Command::Identify,
        Cmd::Sweep => Command::Sweep,
    };
    let ov = Overrides { out: args.out, seed: args.seed, jobs: args.jobs.map(|j| j as usize) };
    let result = load_config(args.config.as_deref(), &ov).and_then(|cfg| run(cmd, &cfg, ov.jobs));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            println!("{}", error_summary(cmd, &e));
            ExitCode::from(e.exit_code())
        }
    }
}
