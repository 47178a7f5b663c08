use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use probspec_cli::commands::{self, PlotKind, RunArgs};
use probspec_cli::error::CliResult;

#[derive(Parser)]
#[command(name = "probspec", version, about = "Probabilistic spectral simulation of periodic 1+1-dimensional PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and store its trajectory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: $PROBSPEC_OUT_ROOT/<config stem>-seed<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-step spectra (from `spectrum-from-truth`) to use instead of
        /// the configured spectrum.
        #[arg(long)]
        spectrum_file: Option<PathBuf>,
    },
    /// Compute and store the reference solution of a config.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a run with a reference directory, another run or `analytic`.
    Compare {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        reference: String,
        /// Point table; the summary goes to `<stem>.summary.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate per-step spectra from a stored reference.
    SpectrumFromTruth {
        #[arg(long)]
        reference: PathBuf,
        /// Inclusive step range `A..B` (empty when B < A) or a single step.
        #[arg(long)]
        steps: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a stored run as SVG.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// Step for `step` and `calibration` plots [default: last].
        #[arg(long)]
        step: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Step,
    Evolution,
    Spectra,
    Calibration,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            spectrum_file,
        } => {
            let dir = commands::run(&RunArgs {
                config,
                out,
                seed,
                spectrum_file,
            })?;
            println!("{}", dir.display());
        }
        Command::Reference { config, out } => {
            println!("{}", commands::reference(&config, out)?.display());
        }
        Command::Compare { run, reference, out } => {
            let s = commands::compare(&run, &reference, &out)?;
            println!(
                "{} steps, calibration fraction {:.4}",
                s.steps.len(),
                s.calibration_fraction
            );
        }
        Command::SpectrumFromTruth { reference, steps, out } => {
            let n = commands::spectrum_from_truth(&reference, &steps, &out)?;
            println!("{n} spectra written to {}", out.display());
        }
        Command::Plot { run, kind, out, step } => {
            let kind = match kind {
                Kind::Step => PlotKind::Step,
                Kind::Evolution => PlotKind::Evolution,
                Kind::Spectra => PlotKind::Spectra,
                Kind::Calibration => PlotKind::Calibration,
            };
            commands::plot(&run, kind, &out, step)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
