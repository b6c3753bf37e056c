//! The simulated environment: importance density fields, robot kinematics,
//! local sensing and per-robot map bookkeeping.
//!
//! All randomness flows through one [`WorldRng`] (ChaCha8) in a fixed draw
//! order: for every IDF in turn, for every Gaussian in turn, `mean_x`,
//! `mean_y`, `variance`, `scale`; then the objective IDF (if enabled) with the
//! same recipe; then each robot's `x`, `y`. Callers that need further draws
//! (constraint thresholds) continue from the same generator.

use std::path::Path;

use bitvec::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::field::{GridField, GridShape, Point};

pub type WorldRng = ChaCha8Rng;

pub fn world_rng(seed: u64) -> WorldRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn default_env_size() -> f64 {
    1024.0
}
fn default_resolution() -> f64 {
    1.0
}
fn default_num_robots() -> usize {
    32
}
fn default_num_idfs() -> usize {
    4
}
fn default_comm_radius() -> f64 {
    256.0
}
fn default_sensor_size() -> usize {
    64
}
fn default_max_speed() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.5
}
fn default_num_steps() -> usize {
    500
}
fn default_dual_period() -> usize {
    25
}
fn default_gaussians() -> usize {
    8
}
fn default_variance_range() -> [f64; 2] {
    [40.0, 60.0]
}
fn default_scale_range() -> [f64; 2] {
    [0.05, 1.0]
}

/// Environment and run parameters. Parsed from a flat `key = value`
/// document; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    #[serde(default = "default_env_size")]
    pub env_size: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_num_robots")]
    pub num_robots: usize,
    #[serde(default = "default_num_idfs")]
    pub num_idfs: usize,
    #[serde(default = "default_comm_radius")]
    pub comm_radius: f64,
    /// Side of the square sensing window, in cells.
    #[serde(default = "default_sensor_size")]
    pub sensor_size: usize,
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_num_steps")]
    pub num_steps: usize,
    #[serde(default = "default_dual_period")]
    pub dual_period: usize,
    /// Dual step size; `None` selects the per-mode default.
    #[serde(default)]
    pub dual_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gaussians")]
    pub gaussians_per_idf: usize,
    #[serde(default = "default_variance_range")]
    pub variance_range: [f64; 2],
    #[serde(default = "default_scale_range")]
    pub scale_range: [f64; 2],
    /// Generate an extra objective IDF (`J_0` of the constrained problem).
    #[serde(default)]
    pub with_objective: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl WorldConfig {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let cfg: WorldConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    pub fn shape(&self) -> GridShape {
        GridShape::square(self.env_size, self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if !(self.resolution > 0.0) || !(self.env_size > 0.0) {
            return bad("env_size and resolution must be positive".into());
        }
        let cells = self.env_size / self.resolution;
        if (cells - cells.round()).abs() > 1e-9 || cells.round() < 1.0 {
            return bad(format!(
                "env_size {} is not an integer multiple of resolution {}",
                self.env_size, self.resolution
            ));
        }
        let cells = cells.round() as usize;
        if self.sensor_size == 0 || !self.sensor_size.is_multiple_of(2) || self.sensor_size >= cells {
            return bad(format!(
                "sensor_size must be even, positive and below {cells}, got {}",
                self.sensor_size
            ));
        }
        if !(self.comm_radius > 0.0) {
            return bad("comm_radius must be positive".into());
        }
        if !(self.dt > 0.0) || !(self.max_speed > 0.0) {
            return bad("dt and max_speed must be positive".into());
        }
        if self.dual_period == 0 {
            return bad("dual_period must be at least 1".into());
        }
        if self.num_robots == 0 || self.num_idfs == 0 {
            return bad("num_robots and num_idfs must be at least 1".into());
        }
        if let Some(eta) = self.dual_step {
            if !(eta > 0.0) {
                return bad(format!("dual_step must be positive, got {eta}"));
            }
        }
        let [vlo, vhi] = self.variance_range;
        if !(vlo > 0.0 && vlo <= vhi) {
            return bad(format!(
                "variance_range {:?} is not a positive interval",
                self.variance_range
            ));
        }
        let [slo, shi] = self.scale_range;
        if !(slo >= 0.0 && slo <= shi && shi > 0.0) {
            return bad(format!(
                "scale_range {:?} is not a nonnegative interval",
                self.scale_range
            ));
        }
        if self.gaussians_per_idf == 0 {
            return bad("gaussians_per_idf must be at least 1".into());
        }
        Ok(())
    }
}

/// One truncated isotropic Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBump {
    pub mean: Point,
    pub variance: f64,
    pub scale: f64,
}

impl GaussianBump {
    /// Adds the bump, evaluated at cell centers and cut off beyond three
    /// standard deviations, into `field`.
    pub fn rasterize(&self, field: &mut GridField) {
        let shape = *field.shape();
        let sigma = self.variance.sqrt();
        let reach = 3.0 * sigma;
        let reach_sq = 9.0 * self.variance;
        let norm = self.scale / (2.0 * std::f64::consts::PI * self.variance);
        let span = |lo: f64, hi: f64, n: usize| {
            let a = ((lo / shape.resolution).floor().max(0.0)) as usize;
            let b = ((hi / shape.resolution).ceil().max(0.0) as usize).min(n);
            a..b
        };
        let cols = span(self.mean.x - reach, self.mean.x + reach, shape.width);
        let rows = span(self.mean.y - reach, self.mean.y + reach, shape.height);
        let values = field.values_mut();
        for row in rows {
            let dy = shape.center_coord(row) - self.mean.y;
            for col in cols.clone() {
                let dx = shape.center_coord(col) - self.mean.x;
                let d2 = dx * dx + dy * dy;
                if d2 <= reach_sq {
                    values[row * shape.width + col] += norm * (-d2 / (2.0 * self.variance)).exp();
                }
            }
        }
    }
}

fn draw_bump(rng: &mut WorldRng, config: &WorldConfig) -> GaussianBump {
    let x = rng.random_range(0.0..config.env_size);
    let y = rng.random_range(0.0..config.env_size);
    let [vlo, vhi] = config.variance_range;
    let variance = if vlo < vhi { rng.random_range(vlo..vhi) } else { vlo };
    let [slo, shi] = config.scale_range;
    let scale = rng.random_range(slo..=shi);
    GaussianBump {
        mean: Point::new(x, y),
        variance,
        scale,
    }
}

/// Draws `gaussians_per_idf` bumps and returns their sum normalized to unit
/// mass.
pub fn generate_idf(rng: &mut WorldRng, config: &WorldConfig) -> GridField {
    let mut field = GridField::zeros(config.shape());
    for _ in 0..config.gaussians_per_idf {
        draw_bump(rng, config).rasterize(&mut field);
    }
    field.normalize();
    field
}

/// Clips `u` to norm at most `max_speed`.
pub fn clip_speed(u: Point, max_speed: f64) -> Point {
    let n = u.norm();
    if n <= max_speed {
        return u;
    }
    let mut v = u * (max_speed / n);
    while v.norm() > max_speed {
        v *= 1.0 - f64::EPSILON;
    }
    v
}

/// Single-integrator update `p ← p + dt·u` with speed clipping and clamping
/// to the workspace.
pub fn step_dynamics(positions: &[Point], actions: &[Point], config: &WorldConfig) -> Result<Vec<Point>> {
    if positions.len() != actions.len() {
        return Err(CoreError::Dimension(format!(
            "{} positions but {} actions",
            positions.len(),
            actions.len()
        )));
    }
    let (xmax, ymax) = config.shape().extent();
    Ok(positions
        .iter()
        .zip(actions)
        .map(|(p, u)| {
            let q = p + clip_speed(*u, config.max_speed) * config.dt;
            Point::new(q.x.clamp(0.0, xmax), q.y.clamp(0.0, ymax))
        })
        .collect())
}

/// A robot's pose together with what it has observed so far.
///
/// Observed values are never copied: the importance map of IDF `m` is the
/// true field restricted to `observed`, so it agrees with ground truth by
/// construction. Every IDF shares the same sensing window, hence one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub position: Point,
    pub observed: BitVec,
    pub boundary: BitVec,
    pub last_action: Point,
}

impl RobotState {
    pub fn new(position: Point, shape: &GridShape) -> Self {
        Self {
            position,
            observed: bitvec![0; shape.num_cells()],
            boundary: bitvec![0; shape.num_cells()],
            last_action: Point::zeros(),
        }
    }

    /// The robot's importance map for `field`: observed cells carry the true
    /// value, everything else is zero.
    pub fn importance_map(&self, field: &GridField) -> GridField {
        let mut out = GridField::zeros(*field.shape());
        let src = field.values();
        let dst = out.values_mut();
        for c in self.observed.iter_ones() {
            dst[c] = src[c];
        }
        out
    }

    pub fn observed_count(&self) -> usize {
        self.observed.count_ones()
    }
}

/// Range of cell indices `[c - half, c + half)` clipped to `[0, n)`.
pub(crate) fn window_range(center: usize, half: usize, n: usize) -> std::ops::Range<usize> {
    center.saturating_sub(half)..(center + half).min(n)
}

/// Marks the sensing window around the robot as observed and records any
/// workspace-perimeter cells inside it in the boundary map. Returns the
/// number of newly observed cells.
pub fn sense(robot: &mut RobotState, shape: &GridShape, sensor_size: usize) -> usize {
    let (cc, cr) = shape.cell_of(&robot.position);
    let half = sensor_size / 2;
    let cols = window_range(cc, half, shape.width);
    let rows = window_range(cr, half, shape.height);
    let mut fresh = 0;
    for row in rows {
        let base = row * shape.width;
        let edge_row = row == 0 || row + 1 == shape.height;
        for col in cols.clone() {
            let idx = base + col;
            if !robot.observed.replace(idx, true) {
                fresh += 1;
            }
            if edge_row || col == 0 || col + 1 == shape.width {
                robot.boundary.set(idx, true);
            }
        }
    }
    fresh
}

/// Pointwise `Σ_m weights[m]·fields[m]`.
pub fn combined_field(fields: &[GridField], weights: &[f64]) -> Result<GridField> {
    if fields.len() != weights.len() || fields.is_empty() {
        return Err(CoreError::Dimension(format!(
            "{} fields but {} weights",
            fields.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(CoreError::Domain(format!("negative combination weight {w}")));
    }
    let shape = *fields[0].shape();
    if fields.iter().any(|f| *f.shape() != shape) {
        return Err(CoreError::Dimension("fields do not share a grid".into()));
    }
    let mut out = GridField::zeros(shape);
    let dst = out.values_mut();
    for (f, &w) in fields.iter().zip(weights) {
        for (d, s) in dst.iter_mut().zip(f.values()) {
            *d += w * s;
        }
    }
    Ok(out)
}

/// Ground truth plus the robot team.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub shape: GridShape,
    pub idfs: Vec<GridField>,
    pub objective: Option<GridField>,
    pub robots: Vec<RobotState>,
}

impl World {
    /// Draws fields and initial positions from `rng` in the documented order.
    pub fn generate(config: &WorldConfig, rng: &mut WorldRng) -> Result<Self> {
        config.validate()?;
        let idfs = (0..config.num_idfs).map(|_| generate_idf(rng, config)).collect();
        let objective = config.with_objective.then(|| generate_idf(rng, config));
        let mut positions: Vec<Point> = Vec::with_capacity(config.num_robots);
        while positions.len() < config.num_robots {
            let p = Point::new(
                rng.random_range(0.0..config.env_size),
                rng.random_range(0.0..config.env_size),
            );
            if !positions.contains(&p) {
                positions.push(p);
            }
        }
        Self::from_parts(config.clone(), idfs, objective, positions)
    }

    pub fn from_parts(
        config: WorldConfig,
        idfs: Vec<GridField>,
        objective: Option<GridField>,
        positions: Vec<Point>,
    ) -> Result<Self> {
        let shape = config.shape();
        if idfs.is_empty() {
            return Err(CoreError::Domain("a world needs at least one IDF".into()));
        }
        if idfs.iter().chain(objective.iter()).any(|f| *f.shape() != shape) {
            return Err(CoreError::Dimension("field grid does not match configuration".into()));
        }
        if positions.is_empty() {
            return Err(CoreError::Domain("a world needs at least one robot".into()));
        }
        let (xmax, ymax) = shape.extent();
        if let Some(p) = positions
            .iter()
            .find(|p| !(0.0..=xmax).contains(&p.x) || !(0.0..=ymax).contains(&p.y))
        {
            return Err(CoreError::Domain(format!(
                "robot at ({}, {}) lies outside the workspace",
                p.x, p.y
            )));
        }
        let robots = positions.iter().map(|p| RobotState::new(*p, &shape)).collect();
        Ok(Self {
            config,
            shape,
            idfs,
            objective,
            robots,
        })
    }

    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.robots.iter().map(|r| r.position).collect()
    }

    pub fn sense_all(&mut self) {
        let (shape, size) = (self.shape, self.config.sensor_size);
        for robot in &mut self.robots {
            sense(robot, &shape, size);
        }
    }

    /// Moves every robot under `actions`, recording the clipped command.
    pub fn apply_actions(&mut self, actions: &[Point]) -> Result<()> {
        let next = step_dynamics(&self.positions(), actions, &self.config)?;
        for ((robot, p), u) in self.robots.iter_mut().zip(next).zip(actions) {
            robot.position = p;
            robot.last_action = clip_speed(*u, self.config.max_speed);
        }
        Ok(())
    }

    /// Union of all robots' observation masks.
    pub fn fused_observed(&self) -> BitVec {
        let mut mask = bitvec![0; self.shape.num_cells()];
        for r in &self.robots {
            mask |= &r.observed;
        }
        mask
    }
}
