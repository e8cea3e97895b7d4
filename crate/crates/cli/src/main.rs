mod commands;
mod error;
mod plot;
mod spec;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::spec::ExperimentSpec;

/// Environment variable that overrides the spec's output directory.
const OUT_DIR_ENV: &str = "DLMS_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "dlms",
    version,
    about = "Deep linear matrix-sensing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the measurement container and ground truth.
    Generate(Common),
    /// Train vanilla and label-noise SGD, write CSVs and a JSON summary.
    Run(Common),
    /// Render training CSVs to a four-panel SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// CSV files; defaults to the run outputs in the output directory.
        csv: Vec<PathBuf>,
    },
    /// Run the numerical checks and write a JSON report.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (JSON). Defaults to the built-in scaled experiment.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; takes precedence over DLMS_OUT_DIR and the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the experiment and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Use d=60, n=600, r=3.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn resolve(&self) -> CliResult<(ExperimentSpec, PathBuf)> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if self.paper_scale {
            spec.apply_paper_scale();
        }
        if let Some(seed) = self.seed {
            spec.reseed(seed);
        }
        spec.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| spec.output_dir.clone());
        spec.output_dir = out.clone();
        Ok((spec, out))
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(common) => {
            let (spec, out) = common.resolve()?;
            let s = commands::generate(&spec, &out)?;
            println!(
                "dims={:?} n={} nuclear_norm={:.6} frobenius_norm={:.6} -> {}",
                s.dims,
                s.n,
                s.nuclear_norm,
                s.frobenius_norm,
                out.display()
            );
        }
        Command::Run(common) => {
            let (spec, out) = common.resolve()?;
            let report = commands::run(&spec, &out)?;
            if let Some(b) = &report.baselines.min_nuclear {
                println!(
                    "min-nuclear objective {:.6} ({} ADMM iterations)",
                    b.objective, b.iterations
                );
            }
            for m in [&report.vanilla, &report.labelnoise] {
                println!(
                    "{}: step {} train {:.3e} test {:.3e} nuclear {:.6} trace {:.4}",
                    m.csv.display(),
                    m.last.step,
                    m.last.train_loss,
                    m.last.test_loss,
                    m.last.nuclear_norm,
                    m.last.paper_trace
                );
            }
        }
        Command::Plot { common, csv } => {
            let out = common
                .out
                .clone()
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
            let out = match out {
                Some(dir) => dir,
                None => common.resolve()?.1,
            };
            let target = commands::plot(&csv, &out)?;
            println!("{}", target.display());
        }
        Command::Verify(common) => {
            let (spec, out) = common.resolve()?;
            let report = commands::verify(&spec, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            if !report.passed {
                return Err(CliError::Verification {
                    failed: report.failures(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
