use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jumplab::cli::{self, RunOptions, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "jumplab",
    version,
    about = "Monte Carlo experiments for jump SDEs"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a report JSON).
    Run {
        config: PathBuf,
        /// Shift the seed range without touching existing rows.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one path CSV per seed and leg.
        #[arg(long)]
        dump_paths: bool,
    },
    /// List registered experiments or models.
    List { kind: String },
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match args.command {
        Command::Run {
            config,
            seed_offset,
            out,
            dump_paths,
        } => {
            let opts = RunOptions {
                seed_offset,
                out,
                dump_paths,
            };
            match cli::run(&config, &opts) {
                Ok(outcome) => {
                    let r = &outcome.report;
                    println!("{}: {:?}", r.experiment, r.verdict);
                    for (k, v) in &r.aggregate {
                        println!("  {k} = {v}");
                    }
                    for p in r.preconditions.iter().filter(|p| !p.passed()) {
                        println!("  precondition {} failed: {:?}", p.condition, p.witness);
                    }
                    println!("report: {}", outcome.report_path.display());
                    println!("seeds:  {}", outcome.seeds_path.display());
                    if !outcome.path_dumps.is_empty() {
                        println!("paths:  {} files", outcome.path_dumps.len());
                    }
                    outcome.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::List { kind } => match cli::list(&kind) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
