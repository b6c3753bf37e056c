//! Multi-robot coverage control with fair and constrained multi-objective
//! costs, solved by a primal-dual outer loop over pluggable coverage
//! policies.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comms;
pub mod controllers;
pub mod duality;
pub mod error;
pub mod field;
pub mod lpac;
pub mod numeric;
pub mod voronoi;
pub mod world;

pub use error::{CoreError, Result};
pub use field::{GridField, GridShape, Point};
