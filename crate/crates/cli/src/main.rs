// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use medscat_cli::artifacts::INDEX_FILE;
use medscat_cli::error::{CliError, CliResult};
use medscat_cli::scenario::load_scenario;
use medscat_cli::{list_builtins, plot, run_scenario};

#[derive(Parser)]
#[command(name = "medscat", version, about = "Spectral and scattering experiments for operators in variable media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a scenario file or a bundled scenario (`paper-suite`).
    Run {
        config: PathBuf,
        /// Output directory; defaults to the scenario's `output` or `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiments to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate figures from a run index (`index.json` or its directory).
    Plot { index: PathBuf },
    /// List built-in symbols, media, experiment kinds and operator families.
    ListBuiltins,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> CliResult<u8> {
    match cmd {
        Command::Run { config, out, jobs, seed } => {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            let scenario = load_scenario(&config)?;
            let out =
                out.or_else(|| scenario.output.clone()).unwrap_or_else(|| PathBuf::from("runs").join(&scenario.name));
            let index = run_scenario(&scenario, &out, jobs, seed)?;
            for r in &index.experiments {
                let detail = r.error.as_deref().unwrap_or("");
                println!("{:<28} {:<24} {:<14} {:>8.2}s {detail}", r.name, r.kind, r.verdict.as_str(), r.wall_time_s);
            }
            println!("index: {}", out.join(INDEX_FILE).display());
            Ok(if index.all_pass() { 0 } else { 1 })
        }
        Command::Plot { index } => {
            let path = if index.is_dir() { index.join(INDEX_FILE) } else { index };
            let n = plot::plot_index(&path)?;
            println!("wrote {n} figures");
            Ok(0)
        }
        Command::ListBuiltins => {
            print!("{}", list_builtins());
            Ok(0)
        }
    }
}
