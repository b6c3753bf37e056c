//! Experiment runner for the coverage-control engine: experiment specs,
//! parameter sweeps, CSV metrics and feasibility summaries.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod report;
pub mod runner;
pub mod spec;

pub use error::{CliError, Result};
pub use report::{feasibility_report, FeasibilityReport};
pub use runner::{run_experiment, run_with_threads};
pub use spec::{ControllerKind, ExperimentSpec, Mode};
