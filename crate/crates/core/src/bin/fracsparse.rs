use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracsparse::harness::{parse_config, run_study, TableFormat};
use fracsparse::Error;

#[derive(Parser)]
#[command(
    name = "fracsparse",
    version,
    about = "Convergence studies for sparse fractional optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output=` in the config).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        verbose: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Validation(_) | Error::Parse { .. } | Error::InvalidParameter(_) => 2,
        Error::NonConvergence { .. } | Error::SolverNotConverged { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        config,
        output,
        format,
        verbose,
    } = cli.command;
    let level = if verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = parse_config(&config).and_then(|spec| {
        let dir = output.unwrap_or_else(|| spec.output.clone());
        run_study(&spec, &dir, format)
    });
    match result {
        Ok(out) => {
            println!("{}", out.summary);
            println!("table: {}", out.table_path.display());
            println!("history: {}", out.history_path.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
