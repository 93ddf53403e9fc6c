use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use speclab_cli::output::write_config_error;
use speclab_cli::{execute, exit, output_dir, Experiment, ExperimentConfig};
use speclab_core::par;

#[derive(Parser)]
#[command(name = "speclab", version, about = "Spectral experiments for one-dimensional Schrödinger operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "SPECLAB_WORKERS")]
    workers: Option<usize>,
    /// Override a config entry, e.g. grid.n=1024 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues in a window, with virial defects.
    Spectrum(Common),
    /// Tail-decay fit and weighted identities of one eigenfunction.
    Decay(Common),
    /// Compressed commutator bottom on spectral windows.
    Mourre(Common),
    /// Weighted resolvent norms along a μ sequence.
    Lap(Common),
    /// Hypothesis functionals and the feasibility fit.
    Hypothesis(Common),
    /// Helffer–Sjöstrand calculus checks.
    Hscheck(Common),
    /// Double-difference regularity integrand.
    Regularity(Common),
    /// (ζ, θ) phase-map sweep.
    Scan(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Spectrum(c) => (Experiment::Spectrum, c),
        Command::Decay(c) => (Experiment::Decay, c),
        Command::Mourre(c) => (Experiment::Mourre, c),
        Command::Lap(c) => (Experiment::Lap, c),
        Command::Hypothesis(c) => (Experiment::Hypothesis, c),
        Command::Hscheck(c) => (Experiment::Hscheck, c),
        Command::Regularity(c) => (Experiment::Regularity, c),
        Command::Scan(c) => (Experiment::Scan, c),
    };
    let mut overrides = vec![format!("experiment=\"{}\"", experiment.name())];
    overrides.extend(common.overrides);
    let cfg = match ExperimentConfig::from_path(&common.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("speclab: {}: {e}", e.kind());
            if let Some(dir) = &common.out {
                if let Err(w) = write_config_error(dir, experiment.name(), &e) {
                    eprintln!("speclab: {w}");
                }
            }
            return ExitCode::from(exit::VALIDATION as u8);
        }
    };
    let out = output_dir(common.out, &cfg);
    let run = || execute(&cfg, &out);
    let (code, err) = match common.workers {
        Some(0) => {
            eprintln!("speclab: --workers must be positive");
            return ExitCode::from(exit::VALIDATION as u8);
        }
        Some(w) => par::with_workers(w, run),
        None => run(),
    };
    if let Some(e) = err {
        eprintln!("speclab: {}: {e}", e.kind());
    } else {
        eprintln!("speclab: {} finished, results in {}", experiment.name(), out.display());
    }
    ExitCode::from(code as u8)
}
