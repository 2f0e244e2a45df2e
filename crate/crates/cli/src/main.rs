//! Command-line front end: seeded training runs from TOML configs, run-dir
//! re-evaluation, SVG plotting, and cross-run comparison tables.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numerical
//! failure (non-finite training loss or covariance breakdown).

mod config;
mod plot;
mod runner;

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hmog",
    version,
    about = "Train and inspect small adversarial mixture generators on 2-D Gaussian data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per a config file and write all run artifacts
    Run {
        /// Path to an experiment TOML
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a run directory and print its metrics
    Eval {
        run_dir: PathBuf,
    },
    /// Render scatter / correlation / tree SVGs into a run directory
    Plot {
        run_dir: PathBuf,
    },
    /// Print a final-metrics table across several run directories
    Compare {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is a
            // usage error and exits with the configuration-error code.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for numerical breakdowns, 1 for everything else (config, IO, usage).
fn exit_code(e: &hmog::Error) -> u8 {
    use hmog::Error as E;
    match e {
        E::NonFiniteLoss { .. } | E::NonFiniteGrad(_) | E::NotPsd(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> hmog::Result<()> {
    match cli.cmd {
        Cmd::Run { config: path, seed, out } => {
            let mut file = config::load_file(&path)?;
            if let Some(s) = seed {
                file.seed = Some(s);
            }
            if let Some(o) = out {
                file.output_dir = Some(o);
            }
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let (exp, notices) = config::resolve(file, base)?;
            for n in &notices {
                eprintln!("notice: {n}");
            }
            let dir = runner::run_experiment(&exp)?;
            let metrics = runner::read_metrics(&dir)?;
            if let Some(last) = metrics.last() {
                println!(
                    "step {}: frechet {:.4}, 5-nn overall {:.4}, modes {}",
                    last.step, last.frechet, last.knn_overall, last.modes_covered
                );
            }
            println!("run written to {}", dir.display());
            Ok(())
        }
        Cmd::Eval { run_dir } => {
            let report = runner::eval_run(&run_dir)?;
            println!(
                "frechet {:.6}\n5-nn real {:.4}, fake {:.4}, overall {:.4}\nmodes covered {} ({:?} samples per mode)",
                report.frechet,
                report.knn_real,
                report.knn_fake,
                report.knn_overall,
                report.modes_covered,
                report.samples_per_mode
            );
            Ok(())
        }
        Cmd::Plot { run_dir } => {
            let written = plot::emit_plots(&run_dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Cmd::Compare { run_dirs } => {
            print!("{}", runner::compare(&run_dirs)?);
            Ok(())
        }
    }
}
