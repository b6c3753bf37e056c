//! Inference for the learnable perception-action-communication policy:
//! a CNN over a local four-channel image, a polynomial graph filter bank
//! over the communication graph, and an MLP action head.

mod dataset;
mod net;
mod observation;
mod weights;

pub use dataset::{export_imitation_dataset, read_dataset, Dataset, DatasetStep, DATASET_MAGIC, DATASET_VERSION};
pub use net::{LpacNet, LpacPolicy};
pub use observation::{build_observation, Observation};
pub use weights::{architecture, NamedTensor, TensorSpec, WeightBundle, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// Input image channels: importance, boundary, neighbor Δx, neighbor Δy.
pub const OBS_CHANNELS: usize = 4;
/// Side of the pooled observation image.
pub const OBS_SIDE: usize = 32;
/// Side of the map window, in cells, before pooling.
pub const OBS_WINDOW: usize = 256;
pub const POOL: usize = OBS_WINDOW / OBS_SIDE;

pub const CNN_STAGES: usize = 3;
pub const CNN_CHANNELS: usize = 32;
pub const FEATURE_DIM: usize = 32;
/// Graph filter taps per layer are `S^0 ..= S^GNN_HOPS`.
pub const GNN_HOPS: usize = 3;
pub const GNN_LAYERS: usize = 5;
pub const GNN_WIDTH: usize = 512;
pub const MLP_WIDTH: usize = 32;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;
