use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coverduals::lpac::{export_imitation_dataset, WeightBundle};
use coverduals::world::{world_rng, World};
use coverduals_cli::runner::run_with_threads;
use coverduals_cli::{CliError, ControllerKind, ExperimentSpec, Mode, Result};
use log::info;

#[derive(Parser)]
#[command(name = "coverduals", version, about = "Primal-dual multi-robot coverage experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (cell, repetition) of an experiment spec and write CSVs.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Base seed; overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; outputs do not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// LPAC weight bundle; overrides `weights`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Roll out the clairvoyant controller under uniform λ and write an
    /// imitation dataset.
    ExportDataset {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a weight bundle with seeded random (or zero) weights.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        zeros: bool,
    },
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = seed {
        spec.world.seed = seed;
    }
    Ok(spec)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            spec,
            out,
            controller,
            mode,
            seed,
            threads,
            weights,
        } => {
            let mut spec = load_spec(&spec, seed)?;
            if let Some(out) = out {
                spec.output_dir = out;
            }
            if let Some(c) = controller {
                spec.controller = c;
            }
            if let Some(m) = mode {
                spec.set_mode(m);
            }
            if weights.is_some() {
                spec.weights = weights;
            }
            spec.validate()?;
            if threads == 0 {
                return Err(CliError::Spec("--threads must be at least 1".into()));
            }
            let bundle = match (&spec.controller, &spec.weights) {
                (ControllerKind::Lpac, Some(path)) => Some(WeightBundle::load(path)?),
                (ControllerKind::Lpac, None) => {
                    return Err(CliError::Spec("controller lpac needs --weights or `weights`".into()))
                }
                _ => None,
            };
            let summary = run_with_threads(&spec, bundle.as_ref(), threads)?;
            for s in &summary {
                info!(
                    "cell {}: final max J {:.6} ± {:.6}",
                    s.cell.index, s.final_max_mean, s.final_max_std
                );
            }
            Ok(())
        }
        Command::ExportDataset { spec, out, steps, seed } => {
            let spec = load_spec(&spec, seed)?;
            let cfg = &spec.world;
            let mut world = World::generate(cfg, &mut world_rng(cfg.seed))?;
            let lambda = vec![1.0 / cfg.num_idfs as f64; cfg.num_idfs];
            let records = export_imitation_dataset(&mut world, &lambda, steps, BufWriter::new(File::create(&out)?))?;
            info!("wrote {records} records to {}", out.display());
            Ok(())
        }
        Command::InitWeights { out, seed, zeros } => {
            let bundle = if zeros {
                WeightBundle::zeros()
            } else {
                WeightBundle::random(seed)
            };
            bundle.save(&out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COVERDUALS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coverduals: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
