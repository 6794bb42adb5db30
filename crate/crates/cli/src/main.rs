use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tortoise_nls::{execute, thread_cap, validate, RunError};

#[derive(Parser)]
#[command(name = "tortoise-nls", version, about = "Defocusing NLS experiments on the Schwarzschild exterior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse the config and check the domain guard without running.
    Validate { config: PathBuf },
}

fn init_threads() -> Result<(), RunError> {
    let cap = thread_cap()?;
    #[cfg(feature = "parallel")]
    if let Some(n) = cap {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cap;
    Ok(())
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("tortoise-nls: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        return fail(e);
    }
    match cli.command {
        Command::Run { config } => match execute(&config) {
            Ok(report) => {
                for f in &report.flags {
                    eprintln!("flag: {f}");
                }
                for c in &report.checks {
                    println!("{}: {} | {} (band {})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.measured, c.band);
                }
                ExitCode::from(report.exit_code() as u8)
            }
            Err(e) => fail(e),
        },
        Command::Validate { config } => match validate(&config) {
            Ok(flags) => {
                for f in flags {
                    println!("flag: {f}");
                }
                println!("config ok");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
