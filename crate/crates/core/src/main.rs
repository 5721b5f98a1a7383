use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gortho::cli::{self, verify, ExperimentConfig};
use gortho::Error;

#[derive(Parser)]
#[command(name = "gortho", version, about = "G-orthogonal networks for learnt quadratic forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Sweep members to run concurrently as child processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check module invariants; `all` runs every suite.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Print the canonical alignment of a vector under a diagonal form.
    Align {
        #[arg(long)]
        form: PathBuf,
        #[arg(long)]
        x: PathBuf,
    },
}

fn read(path: &PathBuf) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::Run { config, jobs } => {
            let cfg = ExperimentConfig::load(&config)?.with_env_seed()?;
            let exe = std::env::current_exe().ok();
            let reports = cli::run_experiment(&cfg, jobs.max(1), exe.as_deref())?;
            for r in &reports {
                println!("{}", r.config.output_dir.display());
                for m in &r.metrics {
                    let v = m.value.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6e}"));
                    println!("  {:<30} {v}", m.metric);
                }
            }
            Ok(cli::EXIT_OK)
        }
        Command::Verify { suite } => {
            let checks = if suite == "all" {
                verify::run_all()
            } else {
                verify::run_suite(&suite)?
            };
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            Ok(if failed == 0 { cli::EXIT_OK } else { cli::EXIT_FAILURE })
        }
        Command::Align { form, x } => {
            print!("{}", cli::align(&read(&form)?, &read(&x)?)?);
            Ok(cli::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
