//! Scalar densities on a regular square grid.

use std::io::{Read, Write};

use nalgebra::Vector2;

use crate::error::{CoreError, Result};
use crate::numeric::ExactSum;

/// A point in the workspace, in meters.
pub type Point = Vector2<f64>;

/// Dimensions of the discretized workspace. Cell `(col, row)` covers
/// `[col, col + 1) × [row, row + 1)` scaled by `resolution`, and is
/// represented by its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl GridShape {
    pub fn new(width: usize, height: usize, resolution: f64) -> Self {
        Self {
            width,
            height,
            resolution,
        }
    }

    /// Square grid covering `[0, env_size]²`.
    pub fn square(env_size: f64, resolution: f64) -> Self {
        let n = (env_size / resolution).round() as usize;
        Self::new(n, n, resolution)
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    #[inline]
    pub fn center_coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.resolution
    }

    pub fn cell_center(&self, index: usize) -> Point {
        let (c, r) = self.col_row(index);
        Point::new(self.center_coord(c), self.center_coord(r))
    }

    /// Cell containing `p`, clamped onto the grid.
    pub fn cell_of(&self, p: &Point) -> (usize, usize) {
        let clamp = |v: f64, n: usize| ((v / self.resolution).floor().max(0.0) as usize).min(n - 1);
        (clamp(p.x, self.width), clamp(p.y, self.height))
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }
}

/// Nonnegative density over a [`GridShape`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    shape: GridShape,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_cells()],
        }
    }

    pub fn from_values(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_cells() {
            return Err(CoreError::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                shape.width,
                shape.height
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(CoreError::Domain(format!(
                "field value {v} is not a finite nonnegative number"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.shape.index(col, row)]
    }

    /// Σ values × cell area, correctly rounded.
    pub fn mass(&self) -> f64 {
        let area = self.shape.cell_area();
        self.values.iter().map(|v| v * area).collect::<ExactSum>().value()
    }

    /// Rescales to unit mass. A zero field is left untouched.
    pub fn normalize(&mut self) {
        let mass = self.mass();
        if mass > 0.0 {
            for v in &mut self.values {
                *v /= mass;
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> GridField {
        GridField {
            shape: self.shape,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Writes the portable dump: `width: u64`, `height: u64`,
    /// `resolution: f64`, then row-major `f64` values, all little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.shape.width as u64).to_le_bytes())?;
        out.write_all(&(self.shape.height as u64).to_le_bytes())?;
        out.write_all(&self.shape.resolution.to_le_bytes())?;
        let mut body = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&body)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let width = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let height = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let resolution = f64::from_le_bytes(word);
        if !(resolution > 0.0) || width == 0 || height == 0 {
            return Err(CoreError::Format(format!(
                "bad grid header {width}x{height} @ {resolution}"
            )));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| CoreError::Format("grid too large".into()))?;
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() != n * 8 {
            return Err(CoreError::Format(format!(
                "expected {} payload bytes, found {}",
                n * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridField::from_values(GridShape::new(width, height, resolution), values)
    }
}
