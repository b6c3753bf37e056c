//! Executes experiment specs: one primal-dual run per (cell, repetition),
//! one CSV per run, then a per-cell summary and a run index.
//!
//! Runs are independent and may execute on any number of threads; results
//! are collected and aggregated in job order, so outputs are identical for
//! every thread count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coverduals::controllers::{CentralizedCvt, ClairvoyantCvt, DecentralizedCvt, Policy};
use coverduals::duality::{
    run_primal_dual, DualState, RunOptions, RunTrace, DEFAULT_CONSTRAINED_STEP, DEFAULT_FAIR_STEP,
};
use coverduals::lpac::{LpacPolicy, WeightBundle};
use coverduals::world::{world_rng, World};
use log::info;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::report::{feasibility_report, mean_std};
use crate::spec::{Cell, ControllerKind, ExperimentSpec, Mode};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const INDEX_FILE: &str = "runs.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub cell: Cell,
    pub rep: usize,
    pub seed: u64,
}

impl Job {
    pub fn file_name(&self) -> String {
        format!("run_c{:03}_r{:03}.csv", self.cell.index, self.rep)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub job: Job,
    pub trace: RunTrace,
    /// Constraint thresholds; `None` in fair mode.
    pub alpha: Option<Vec<f64>>,
}

impl RunOutcome {
    /// Per-IDF mean cost over the final dual window.
    pub fn final_window_mean(&self, period: usize) -> Vec<f64> {
        self.trace.final_window_mean(period)
    }
}

pub fn jobs(spec: &ExperimentSpec) -> Vec<Job> {
    let mut out = Vec::new();
    for cell in spec.cells() {
        for rep in 0..spec.repetitions {
            out.push(Job {
                cell,
                rep,
                seed: spec.run_seed(rep),
            });
        }
    }
    out
}

pub fn make_policy(kind: ControllerKind, bundle: Option<&WeightBundle>) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        ControllerKind::Clairvoyant => Box::new(ClairvoyantCvt),
        ControllerKind::Centralized => Box::new(CentralizedCvt),
        ControllerKind::Decentralized => Box::new(DecentralizedCvt),
        ControllerKind::Lpac => {
            let bundle = bundle.ok_or_else(|| CliError::Spec("controller lpac needs a weights file".into()))?;
            Box::new(LpacPolicy::from_bundle(bundle)?)
        }
    })
}

/// Builds the world and dual state of a job. Thresholds are drawn from
/// `N(μ, alpha_std)` on the world generator, after the world itself.
pub fn prepare(spec: &ExperimentSpec, job: &Job) -> Result<(World, DualState, Option<Vec<f64>>)> {
    let cfg = spec.cell_world(&job.cell, job.seed);
    let mut rng = world_rng(job.seed);
    let world = World::generate(&cfg, &mut rng)?;
    let m = cfg.num_idfs;
    match spec.mode {
        Mode::Fair => {
            let step = cfg.dual_step.unwrap_or(DEFAULT_FAIR_STEP);
            Ok((world, DualState::fair(m, step, cfg.dual_period)?, None))
        }
        Mode::Constrained => {
            let mu = job.cell.mu.expect("constrained cells carry μ");
            let normal = Normal::new(mu, spec.alpha_std).map_err(|e| CliError::Spec(e.to_string()))?;
            let alpha: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
            let step = cfg.dual_step.unwrap_or(DEFAULT_CONSTRAINED_STEP);
            let dual = DualState::constrained(alpha.clone(), step, cfg.dual_period)?;
            Ok((world, dual, Some(alpha)))
        }
    }
}

pub fn execute(spec: &ExperimentSpec, job: &Job, bundle: Option<&WeightBundle>) -> Result<RunOutcome> {
    let (mut world, mut dual, alpha) = prepare(spec, job)?;
    let mut policy = make_policy(spec.controller, bundle)?;
    let options = RunOptions {
        num_steps: world.config.num_steps,
        dual_updates: spec.dual_updates,
        normalize_costs: spec.normalize_costs,
    };
    let trace = run_primal_dual(policy.as_mut(), &mut world, &mut dual, options)?;
    Ok(RunOutcome {
        job: *job,
        trace,
        alpha,
    })
}

/// Shortest round-trip decimal; exponent form outside `[1e-5, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn run_csv_header(num_idfs: usize, with_objective: bool) -> Vec<String> {
    let mut h = vec!["step".to_string(), "time_s".to_string()];
    h.extend((0..num_idfs).map(|m| format!("J_{m}")));
    h.push("max_J".into());
    h.extend((0..num_idfs).map(|m| format!("lambda_{m}")));
    if with_objective {
        h.push("J_obj".into());
    }
    h.push("controller".into());
    h.push("seed".into());
    h
}

pub fn write_run_csv<W: Write>(out: W, trace: &RunTrace, controller: &str, seed: u64) -> Result<()> {
    let m = trace.cost_scale.len();
    let with_objective = trace.objective_scale.is_some();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(run_csv_header(m, with_objective))?;
    for rec in &trace.steps {
        let mut row = vec![rec.step.to_string(), fmt_f64(rec.time_s)];
        row.extend(rec.costs.iter().map(|c| fmt_f64(*c)));
        row.push(fmt_f64(rec.max_cost()));
        row.extend(rec.lambda.iter().map(|l| fmt_f64(*l)));
        if with_objective {
            row.push(rec.objective_cost.map(fmt_f64).unwrap_or_default());
        }
        row.push(controller.to_string());
        row.push(seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_run_file(dir: &Path, outcome: &RunOutcome, controller: &str) -> Result<PathBuf> {
    let path = dir.join(outcome.job.file_name());
    let file = fs::File::create(&path)?;
    write_run_csv(
        std::io::BufWriter::new(file),
        &outcome.trace,
        controller,
        outcome.job.seed,
    )?;
    Ok(path)
}

/// Summary row of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub final_max_mean: f64,
    pub final_max_std: f64,
    /// `(constraints %, problems %)` in constrained mode.
    pub infeasible_pct: Option<(f64, f64)>,
}

pub fn summarize(spec: &ExperimentSpec, outcomes: &[RunOutcome]) -> Vec<CellSummary> {
    spec.cells()
        .into_iter()
        .map(|cell| {
            let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.job.cell.index == cell.index).collect();
            let finals: Vec<f64> = runs.iter().map(|o| o.trace.final_max_cost()).collect();
            let (final_max_mean, final_max_std) = mean_std(&finals);
            let infeasible_pct = (spec.mode == Mode::Constrained).then(|| {
                let means: Vec<Vec<f64>> = runs
                    .iter()
                    .map(|o| o.final_window_mean(spec.world.dual_period))
                    .collect();
                let report = feasibility_report(
                    means
                        .iter()
                        .zip(&runs)
                        .map(|(j, o)| (j.as_slice(), o.alpha.as_deref().unwrap_or(&[]))),
                );
                (report.constraint_pct(), report.problem_pct())
            });
            CellSummary {
                cell,
                final_max_mean,
                final_max_std,
                infeasible_pct,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, spec: &ExperimentSpec, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "cell",
        "mode",
        "controller",
        "env_size",
        "num_robots",
        "num_idfs",
        "comm_radius",
        "sensor_size",
        "mu",
        "repetitions",
        "final_max_J_mean",
        "final_max_J_std",
        "infeasible_constraints_pct",
        "infeasible_problems_pct",
    ])?;
    for s in cells {
        let c = &s.cell;
        let (pc, pp) = match s.infeasible_pct {
            Some((a, b)) => (fmt_f64(a), fmt_f64(b)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            c.index.to_string(),
            spec.mode.to_string(),
            spec.controller.to_string(),
            fmt_f64(c.env_size),
            c.num_robots.to_string(),
            c.num_idfs.to_string(),
            fmt_f64(c.comm_radius),
            c.sensor_size.to_string(),
            c.mu.map(fmt_f64).unwrap_or_default(),
            spec.repetitions.to_string(),
            fmt_f64(s.final_max_mean),
            fmt_f64(s.final_max_std),
            pc,
            pp,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

/// One row per run: file, cell, repetition, seed, final max cost, and the
/// `;`-separated final-window means and thresholds used for feasibility.
pub fn write_index_csv<W: Write>(out: W, spec: &ExperimentSpec, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["file", "cell", "rep", "seed", "final_max_J", "final_window_J", "alpha"])?;
    for o in outcomes {
        w.write_record([
            o.job.file_name(),
            o.job.cell.index.to_string(),
            o.job.rep.to_string(),
            o.job.seed.to_string(),
            fmt_f64(o.trace.final_max_cost()),
            join(&o.final_window_mean(spec.world.dual_period)),
            o.alpha.as_deref().map(join).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every job of `spec` and writes all CSVs into `spec.output_dir`.
/// Uses the current rayon pool.
pub fn run_experiment(spec: &ExperimentSpec, bundle: Option<&WeightBundle>) -> Result<Vec<CellSummary>> {
    if spec.controller == ControllerKind::Lpac && bundle.is_none() {
        return Err(CliError::Spec("controller lpac needs a weights file".into()));
    }
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    let jobs = jobs(spec);
    info!(
        "{} runs over {} cells into {}",
        jobs.len(),
        spec.cells().len(),
        dir.display()
    );
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|job| {
            let outcome = execute(spec, job, bundle)?;
            let path = write_run_file(dir, &outcome, spec.controller.name())?;
            info!(
                "cell {} rep {} seed {} -> {}",
                job.cell.index,
                job.rep,
                job.seed,
                path.display()
            );
            Ok(outcome)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(spec, &outcomes);
    write_summary_csv(fs::File::create(dir.join(SUMMARY_FILE))?, spec, &summary)?;
    write_index_csv(fs::File::create(dir.join(INDEX_FILE))?, spec, &outcomes)?;
    Ok(summary)
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(
    spec: &ExperimentSpec,
    bundle: Option<&WeightBundle>,
    threads: usize,
) -> Result<Vec<CellSummary>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Spec(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_experiment(spec, bundle))
}
