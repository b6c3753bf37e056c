//! Experiment specifications: a flat `key = value` file holding the world
//! parameters plus the experiment keys below. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coverduals::world::WorldConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fair,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Clairvoyant,
    Centralized,
    Decentralized,
    Lpac,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Clairvoyant => "clairvoyant",
            ControllerKind::Centralized => "centralized",
            ControllerKind::Decentralized => "decentralized",
            ControllerKind::Lpac => "lpac",
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fair => "fair",
            Mode::Constrained => "constrained",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fair" => Ok(Mode::Fair),
            "constrained" => Ok(Mode::Constrained),
            _ => Err(CliError::Spec(format!("unknown mode {s:?} (fair, constrained)"))),
        }
    }
}

impl FromStr for ControllerKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clairvoyant" => Ok(ControllerKind::Clairvoyant),
            "centralized" => Ok(ControllerKind::Centralized),
            "decentralized" => Ok(ControllerKind::Decentralized),
            "lpac" => Ok(ControllerKind::Lpac),
            _ => Err(CliError::Spec(format!(
                "unknown controller {s:?} (clairvoyant, centralized, decentralized, lpac)"
            ))),
        }
    }
}

fn default_mode() -> Mode {
    Mode::Fair
}
fn default_controller() -> ControllerKind {
    ControllerKind::Clairvoyant
}
fn default_repetitions() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_alpha_std() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

/// Experiment keys; every other key belongs to [`WorldConfig`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentKeys {
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default = "default_controller")]
    controller: ControllerKind,
    #[serde(default = "default_repetitions")]
    repetitions: usize,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    weights: Option<PathBuf>,
    #[serde(default = "default_alpha_std")]
    alpha_std: f64,
    #[serde(default = "default_true")]
    dual_updates: bool,
    #[serde(default = "default_true")]
    normalize_costs: bool,
    env_sizes: Option<Vec<f64>>,
    robot_counts: Option<Vec<usize>>,
    idf_counts: Option<Vec<usize>>,
    comm_radii: Option<Vec<f64>>,
    sensor_sizes: Option<Vec<usize>>,
    mu_levels: Option<Vec<f64>>,
}

const EXPERIMENT_KEYS: &[&str] = &[
    "mode",
    "controller",
    "repetitions",
    "output_dir",
    "weights",
    "alpha_std",
    "dual_updates",
    "normalize_costs",
    "env_sizes",
    "robot_counts",
    "idf_counts",
    "comm_radii",
    "sensor_sizes",
    "mu_levels",
];

/// Sweep axes. Every axis is a nonempty list; unspecified axes hold the
/// single value from the base world.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub env_sizes: Vec<f64>,
    pub robot_counts: Vec<usize>,
    pub idf_counts: Vec<usize>,
    pub comm_radii: Vec<f64>,
    pub sensor_sizes: Vec<usize>,
    /// Constraint threshold means; empty in fair mode.
    pub mu_levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub controller: ControllerKind,
    /// Base world; its `seed` is the base seed.
    pub world: WorldConfig,
    pub axes: SweepAxes,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub weights: Option<PathBuf>,
    /// Standard deviation of the sampled constraint thresholds.
    pub alpha_std: f64,
    pub dual_updates: bool,
    pub normalize_costs: bool,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub env_size: f64,
    pub num_robots: usize,
    pub num_idfs: usize,
    pub comm_radius: f64,
    pub sensor_size: usize,
    pub mu: Option<f64>,
}

fn axis<T: Clone>(name: &str, given: Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match given {
        Some(v) if v.is_empty() => Err(CliError::Spec(format!("sweep axis {name} must be nonempty"))),
        Some(v) => Ok(v),
        None => Ok(vec![base]),
    }
}

impl ExperimentSpec {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Spec(e.message().to_string()))?;
        let (exp, world): (toml::Table, toml::Table) = table
            .into_iter()
            .partition(|(k, _)| EXPERIMENT_KEYS.contains(&k.as_str()));
        let keys: ExperimentKeys = exp
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Spec(e.message().to_string()))?;
        let world: WorldConfig = world
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Spec(e.message().to_string()))?;

        if keys.mode == Mode::Fair && keys.mu_levels.is_some() {
            return Err(CliError::Spec("mu_levels applies to constrained mode only".into()));
        }
        let mu_levels = match keys.mode {
            Mode::Fair => Vec::new(),
            Mode::Constrained => axis("mu_levels", keys.mu_levels, 0.5)?,
        };
        let spec = ExperimentSpec {
            mode: keys.mode,
            controller: keys.controller,
            axes: SweepAxes {
                env_sizes: axis("env_sizes", keys.env_sizes, world.env_size)?,
                robot_counts: axis("robot_counts", keys.robot_counts, world.num_robots)?,
                idf_counts: axis("idf_counts", keys.idf_counts, world.num_idfs)?,
                comm_radii: axis("comm_radii", keys.comm_radii, world.comm_radius)?,
                sensor_sizes: axis("sensor_sizes", keys.sensor_sizes, world.sensor_size)?,
                mu_levels,
            },
            world,
            repetitions: keys.repetitions,
            output_dir: keys.output_dir,
            weights: keys.weights,
            alpha_std: keys.alpha_std,
            dual_updates: keys.dual_updates,
            normalize_costs: keys.normalize_costs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(CliError::Spec("repetitions must be at least 1".into()));
        }
        if !(self.alpha_std >= 0.0) || !self.alpha_std.is_finite() {
            return Err(CliError::Spec("alpha_std must be finite and nonnegative".into()));
        }
        if self.mode == Mode::Constrained && self.axes.mu_levels.iter().any(|m| !m.is_finite()) {
            return Err(CliError::Spec("mu_levels must be finite".into()));
        }
        if !self.world.num_steps.is_multiple_of(self.world.dual_period) {
            return Err(CliError::Spec(format!(
                "num_steps {} is not a multiple of dual_period {}",
                self.world.num_steps, self.world.dual_period
            )));
        }
        for cell in self.cells() {
            self.cell_world(&cell, self.world.seed).validate()?;
        }
        Ok(())
    }

    /// Sweep grid in fixed order: env size, robots, IDFs, comm radius,
    /// sensor size, μ (outermost to innermost).
    pub fn cells(&self) -> Vec<Cell> {
        let a = &self.axes;
        let mus: Vec<Option<f64>> = match self.mode {
            Mode::Fair => vec![None],
            Mode::Constrained => a.mu_levels.iter().map(|m| Some(*m)).collect(),
        };
        let mut cells = Vec::new();
        for &env_size in &a.env_sizes {
            for &num_robots in &a.robot_counts {
                for &num_idfs in &a.idf_counts {
                    for &comm_radius in &a.comm_radii {
                        for &sensor_size in &a.sensor_sizes {
                            for &mu in &mus {
                                cells.push(Cell {
                                    index: cells.len(),
                                    env_size,
                                    num_robots,
                                    num_idfs,
                                    comm_radius,
                                    sensor_size,
                                    mu,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn cell_world(&self, cell: &Cell, seed: u64) -> WorldConfig {
        WorldConfig {
            env_size: cell.env_size,
            num_robots: cell.num_robots,
            num_idfs: cell.num_idfs,
            comm_radius: cell.comm_radius,
            sensor_size: cell.sensor_size,
            seed,
            ..self.world.clone()
        }
    }

    /// Switches mode, keeping the μ axis consistent with it.
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        match mode {
            Mode::Fair => self.axes.mu_levels.clear(),
            Mode::Constrained if self.axes.mu_levels.is_empty() => self.axes.mu_levels.push(0.5),
            Mode::Constrained => {}
        }
    }

    /// Seed of repetition `rep`. Shared by every cell, so cells compare
    /// paired worlds wherever their shapes agree.
    pub fn run_seed(&self, rep: usize) -> u64 {
        self.world.seed.wrapping_add(rep as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_axes() {
        let spec =
            ExperimentSpec::from_kv_str("num_robots = 4\nenv_size = 64\nsensor_size = 16\nrepetitions = 2\n").unwrap();
        assert_eq!(spec.mode, Mode::Fair);
        assert_eq!(spec.controller, ControllerKind::Clairvoyant);
        assert_eq!(spec.axes.robot_counts, vec![4]);
        assert_eq!(spec.cells().len(), 1);
        assert_eq!(spec.run_seed(1), 1);
    }

    #[test]
    fn sweep_grid_order() {
        let spec = ExperimentSpec::from_kv_str(
            "mode = \"constrained\"\nenv_size = 64\nsensor_size = 16\nnum_robots = 4\ncomm_radii = [16.0, 32.0]\nmu_levels = [0.3, 0.5, 0.7]\n",
        )
        .unwrap();
        let cells = spec.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[1].comm_radius, cells[1].mu), (16.0, Some(0.5)));
        assert_eq!((cells[3].comm_radius, cells[3].mu), (32.0, Some(0.3)));
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn rejects_bad_specs() {
        for text in [
            "bogus = 1\n",
            "repetitions = 0\n",
            "robot_counts = []\n",
            "mode = \"fair\"\nmu_levels = [0.5]\n",
            "mode = \"selfish\"\n",
            "controller = \"oracle\"\n",
            "num_robots = 0\n",
            "env_size = \"big\"\n",
            "num_steps = 30\ndual_period = 25\n",
        ] {
            let err = ExperimentSpec::from_kv_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?} gave {err}");
        }
    }
}
