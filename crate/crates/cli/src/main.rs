//! `jcas`: runs seeded sweeps, compares traces and validates input files.
//!
//! Exit status: 0 on success, 1 for invalid input or a failed comparison,
//! 2 for runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jcas_core::harness::{self, ExperimentConfig, FileKind, Tolerances};
use jcas_core::Error;

#[derive(Parser)]
#[command(name = "jcas", version, about = "Joint communication and sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` (also settable through JCAS_OUTPUT_DIR).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare two trace or summary CSVs column by column.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// TOML file with `default` and a `[columns]` table of relative tolerances.
        #[arg(long)]
        tol_file: Option<PathBuf>,
    },
    /// Check a codebook, scene or geometry file.
    Validate { kind: Kind, path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Codebook,
    Scene,
    Geometry,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let out = out.unwrap_or_else(|| cfg.resolved_output());
            let report = harness::run_experiment_in(&cfg, out)?;
            for p in &report.points {
                eprintln!(
                    "{} = {}: {}/{} trials",
                    cfg.sweep.axis.name(),
                    p.value,
                    p.completed,
                    cfg.trials
                );
                for e in &p.errors {
                    eprintln!("  error: {e}");
                }
            }
            println!("{}", report.output_dir.display());
            if report.failed() {
                return Err(Failure::Runtime("some trials failed, see errors.txt".into()));
            }
            Ok(())
        }
        Command::Compare { a, b, tol_file } => {
            let tol = match tol_file {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?;
                    Tolerances::from_toml(&text)?
                }
                None => Tolerances::default(),
            };
            let report = harness::compare_traces(&a, &b, &tol)?;
            print!("{report}");
            if report.pass() {
                Ok(())
            } else {
                Err(Failure::Invalid("traces differ beyond tolerance".into()))
            }
        }
        Command::Validate { kind, path } => {
            let kind = match kind {
                Kind::Codebook => FileKind::Codebook,
                Kind::Scene => FileKind::Scene,
                Kind::Geometry => FileKind::Geometry,
            };
            println!("{}", harness::validate_file(kind, &path)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("jcas: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("jcas: {m}");
            ExitCode::from(2)
        }
    }
}
