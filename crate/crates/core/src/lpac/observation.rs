use bitvec::slice::BitSlice;

use super::{OBS_CHANNELS, OBS_SIDE, OBS_WINDOW, POOL};
use crate::controllers::ObservedMap;
use crate::field::Point;

/// Channel-major `4 × 32 × 32` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    data: Vec<f64>,
}

impl Observation {
    pub const LEN: usize = OBS_CHANNELS * OBS_SIDE * OBS_SIDE;

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; Self::LEN],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Option<Self> {
        (data.len() == Self::LEN).then_some(Self { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * OBS_SIDE * OBS_SIDE..(c + 1) * OBS_SIDE * OBS_SIDE]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * OBS_SIDE + row) * OBS_SIDE + col]
    }

    fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        self.data[(channel * OBS_SIDE + row) * OBS_SIDE + col] = v;
    }
}

/// Builds robot `position`'s observation.
///
/// Channels 0 and 1 are the 256-cell windows of the λ-combined importance
/// map and the boundary map, centered on the robot's cell and average-pooled
/// over 8×8 blocks; cells outside the workspace read as zero. Each neighbor
/// `j` is written at pixel `round(16 + 16·Δ/r_c)` (Δ = p_j − p_i) holding
/// `Δx/r_c` in channel 2 and `Δy/r_c` in channel 3; when two neighbors
/// share a pixel the nearer one is kept.
pub fn build_observation(
    position: Point,
    own_map: ObservedMap<'_>,
    boundary: &BitSlice,
    neighbors: &[Point],
    comm_radius: f64,
) -> Observation {
    let shape = *own_map.shape();
    let mut obs = Observation::zeros();
    let (cc, cr) = shape.cell_of(&position);
    let origin_col = cc as i64 - (OBS_WINDOW / 2) as i64;
    let origin_row = cr as i64 - (OBS_WINDOW / 2) as i64;
    let inv = 1.0 / (POOL * POOL) as f64;
    for py in 0..OBS_SIDE {
        for px in 0..OBS_SIDE {
            let mut importance = 0.0;
            let mut edge = 0.0;
            for dy in 0..POOL {
                let row = origin_row + (py * POOL + dy) as i64;
                if row < 0 || row >= shape.height as i64 {
                    continue;
                }
                for dx in 0..POOL {
                    let col = origin_col + (px * POOL + dx) as i64;
                    if col < 0 || col >= shape.width as i64 {
                        continue;
                    }
                    let idx = shape.index(col as usize, row as usize);
                    importance += own_map.value(idx);
                    if boundary[idx] {
                        edge += 1.0;
                    }
                }
            }
            obs.set(0, py, px, importance * inv);
            obs.set(1, py, px, edge * inv);
        }
    }

    let half = (OBS_SIDE / 2) as f64;
    let mut nearest = vec![f64::INFINITY; OBS_SIDE * OBS_SIDE];
    for p in neighbors {
        let delta = (p - position) / comm_radius;
        let pixel = |v: f64| ((half + half * v).round().max(0.0) as usize).min(OBS_SIDE - 1);
        let (col, row) = (pixel(delta.x), pixel(delta.y));
        let d = delta.norm_squared();
        if d < nearest[row * OBS_SIDE + col] {
            nearest[row * OBS_SIDE + col] = d;
            obs.set(2, row, col, delta.x);
            obs.set(3, row, col, delta.y);
        }
    }
    obs
}
