//! Primal coverage policies: clairvoyant, centralized and decentralized CVT.
//!
//! Every policy maps a [`Snapshot`] to one velocity command per robot. The
//! CVT velocity law is `clip((centroid − p) / dt, max_speed)`; a robot whose
//! region carries no mass stays put.

use bitvec::slice::BitSlice;

use crate::comms::{CommGraph, ShiftOperator};
use crate::error::{CoreError, Result};
use crate::field::{GridField, GridShape, Point};
use crate::voronoi::{finish_centroid, partition, weighted_centroids, weighted_centroids_masked, CellMass, Partition};
use crate::world::{clip_speed, RobotState, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    pub dt: f64,
    pub max_speed: f64,
}

impl From<&WorldConfig> for ControlParams {
    fn from(c: &WorldConfig) -> Self {
        Self {
            dt: c.dt,
            max_speed: c.max_speed,
        }
    }
}

/// Everything a policy may consult at one primal step. Each policy reads
/// only the parts its information regime allows.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub shape: GridShape,
    pub params: ControlParams,
    pub comm_radius: f64,
    pub robots: &'a [RobotState],
    /// The λ-combined ground-truth field.
    pub combined_true: &'a GridField,
    /// Voronoi partition of the current positions.
    pub partition: &'a Partition,
    pub graph: &'a CommGraph,
    pub shift: &'a ShiftOperator,
}

impl Snapshot<'_> {
    pub fn positions(&self) -> Vec<Point> {
        self.robots.iter().map(|r| r.position).collect()
    }

    /// Robot `i`'s own λ-combined importance map.
    pub fn own_map(&self, i: usize) -> ObservedMap<'_> {
        ObservedMap {
            field: self.combined_true,
            mask: &self.robots[i].observed,
        }
    }
}

pub trait Policy {
    fn name(&self) -> &str;
    fn compute_actions(&mut self, snapshot: &Snapshot<'_>) -> Result<Vec<Point>>;
}

/// A field seen through an observation mask: unobserved cells read as zero.
#[derive(Debug, Clone, Copy)]
pub struct ObservedMap<'a> {
    field: &'a GridField,
    mask: &'a BitSlice,
}

impl<'a> ObservedMap<'a> {
    pub fn new(field: &'a GridField, mask: &'a BitSlice) -> Result<Self> {
        if mask.len() != field.shape().num_cells() {
            return Err(CoreError::Dimension("mask does not match field grid".into()));
        }
        Ok(Self { field, mask })
    }

    pub fn shape(&self) -> &GridShape {
        self.field.shape()
    }

    #[inline]
    pub fn value(&self, cell: usize) -> f64 {
        if self.mask[cell] {
            self.field.values()[cell]
        } else {
            0.0
        }
    }

    pub fn observed_cells(&self) -> impl Iterator<Item = usize> + 'a {
        self.mask.iter_ones()
    }
}

/// Velocity toward the region's centroid; zero for an empty region.
pub fn cvt_action(position: Point, region: &CellMass, params: ControlParams) -> Point {
    if region.mass > 0.0 {
        clip_speed((region.centroid - position) / params.dt, params.max_speed)
    } else {
        Point::zeros()
    }
}

/// Lloyd step on the true combined field with full knowledge of positions.
pub fn clairvoyant_cvt(positions: &[Point], combined_true: &GridField, params: ControlParams) -> Result<Vec<Point>> {
    let part = partition(positions, combined_true.shape())?;
    clairvoyant_from_partition(&part, combined_true, params)
}

pub fn clairvoyant_from_partition(part: &Partition, field: &GridField, params: ControlParams) -> Result<Vec<Point>> {
    Ok(weighted_centroids(part, field)?
        .iter()
        .zip(part.sites())
        .map(|(cm, p)| cvt_action(*p, cm, params))
        .collect())
}

/// Lloyd step on the fused observations of the whole team.
pub fn centralized_cvt(positions: &[Point], fused: ObservedMap<'_>, params: ControlParams) -> Result<Vec<Point>> {
    let part = partition(positions, fused.shape())?;
    centralized_from_partition(&part, fused, params)
}

pub fn centralized_from_partition(
    part: &Partition,
    fused: ObservedMap<'_>,
    params: ControlParams,
) -> Result<Vec<Point>> {
    Ok(weighted_centroids_masked(part, fused.field, fused.mask)?
        .iter()
        .zip(part.sites())
        .map(|(cm, p)| cvt_action(*p, cm, params))
        .collect())
}

/// Lloyd step for robot `index` using only its own map and the positions of
/// its communication neighbors. The local Voronoi region is computed against
/// `{index} ∪ neighbors`, ties to the lowest robot index.
pub fn decentralized_cvt(
    index: usize,
    position: Point,
    own_map: ObservedMap<'_>,
    neighbors: &[(usize, Point)],
    params: ControlParams,
) -> Point {
    let shape = *own_map.shape();
    let mut sums = [0.0f64; 3];
    for c in own_map.observed_cells() {
        let phi = own_map.value(c);
        if phi == 0.0 {
            continue;
        }
        let q = shape.cell_center(c);
        let own_d = (position - q).norm_squared();
        let mine = neighbors.iter().all(|(j, p)| {
            let d = (p - q).norm_squared();
            d > own_d || (d == own_d && *j > index)
        });
        if mine {
            sums[0] += phi;
            sums[1] += q.x * phi;
            sums[2] += q.y * phi;
        }
    }
    let region = finish_centroid(sums, position, shape.cell_area());
    cvt_action(position, &region, params)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClairvoyantCvt;

impl Policy for ClairvoyantCvt {
    fn name(&self) -> &str {
        "clairvoyant"
    }

    fn compute_actions(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Point>> {
        clairvoyant_from_partition(snap.partition, snap.combined_true, snap.params)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CentralizedCvt;

impl Policy for CentralizedCvt {
    fn name(&self) -> &str {
        "centralized"
    }

    fn compute_actions(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Point>> {
        let mut fused = snap.robots[0].observed.clone();
        for r in &snap.robots[1..] {
            fused |= &r.observed;
        }
        let view = ObservedMap::new(snap.combined_true, &fused)?;
        centralized_from_partition(snap.partition, view, snap.params)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecentralizedCvt;

impl Policy for DecentralizedCvt {
    fn name(&self) -> &str {
        "decentralized"
    }

    fn compute_actions(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Point>> {
        Ok((0..snap.robots.len())
            .map(|i| {
                let neighbors: Vec<(usize, Point)> = snap
                    .graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| (j, snap.robots[j].position))
                    .collect();
                decentralized_cvt(i, snap.robots[i].position, snap.own_map(i), &neighbors, snap.params)
            })
            .collect())
    }
}
