//! Grid Voronoi partitions, coverage cost and density-weighted centroids.
//!
//! Cells are assigned to the nearest robot by Euclidean distance from the
//! cell center, ties going to the lowest robot index. Costs are accumulated
//! with [`ExactSum`], so the min-over-robots form and the per-partition form
//! of the cost agree exactly on the same grid.

use bitvec::slice::BitSlice;

use crate::error::{CoreError, Result};
use crate::field::{GridField, GridShape, Point};
use crate::numeric::ExactSum;

/// Penalty `f` applied to robot-to-point distance. Implementations must be
/// nondecreasing in distance with `f(0) = 0`; they receive the squared
/// distance to spare a square root.
pub trait DistancePenalty: Sync {
    fn of_squared(&self, d2: f64) -> f64;
}

/// `f(x) = x²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredDistance;

impl DistancePenalty for SquaredDistance {
    #[inline]
    fn of_squared(&self, d2: f64) -> f64 {
        d2
    }
}

/// Nearest-robot assignment of every grid cell.
#[derive(Debug, Clone)]
pub struct Partition {
    shape: GridShape,
    sites: Vec<Point>,
    assignment: Vec<u32>,
    dist_sq: Vec<f64>,
}

impl Partition {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn num_robots(&self) -> usize {
        self.sites.len()
    }

    /// Robot index owning each cell, row-major.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Squared distance from each cell center to its owner.
    pub fn dist_sq(&self) -> &[f64] {
        &self.dist_sq
    }

    /// Cell indices of each robot's Voronoi region.
    pub fn robot_cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.sites.len()];
        for (c, &owner) in self.assignment.iter().enumerate() {
            cells[owner as usize].push(c);
        }
        cells
    }

    /// Coverage cost of `field` using the stored nearest distances.
    pub fn cost(&self, field: &GridField, penalty: &dyn DistancePenalty) -> Result<f64> {
        check_shape(&self.shape, field)?;
        let area = self.shape.cell_area();
        let mut acc = ExactSum::new();
        for (&phi, &d2) in field.values().iter().zip(&self.dist_sq) {
            if phi != 0.0 {
                acc.add(penalty.of_squared(d2) * phi * area);
            }
        }
        Ok(acc.value())
    }
}

fn check_shape(shape: &GridShape, field: &GridField) -> Result<()> {
    if field.shape() != shape {
        return Err(CoreError::Dimension(format!(
            "field is {}x{}, partition is {}x{}",
            field.shape().width,
            field.shape().height,
            shape.width,
            shape.height
        )));
    }
    Ok(())
}

/// Assigns every cell center to its nearest robot.
pub fn partition(positions: &[Point], shape: &GridShape) -> Result<Partition> {
    if positions.is_empty() {
        return Err(CoreError::Domain("cannot partition among zero robots".into()));
    }
    let n = shape.num_cells();
    let mut assignment = vec![0u32; n];
    let mut dist_sq = vec![f64::INFINITY; n];
    let xs: Vec<f64> = (0..shape.width).map(|c| shape.center_coord(c)).collect();
    // Owners are tracked as f64 per row so the select compiles to a blend.
    let mut owner_f = vec![0.0f64; shape.width];
    for row in 0..shape.height {
        let cy = shape.center_coord(row);
        let span = row * shape.width..(row + 1) * shape.width;
        let best = &mut dist_sq[span.clone()];
        owner_f.fill(0.0);
        // Robots in index order with strict improvement: ties keep the lower index.
        for (i, p) in positions.iter().enumerate() {
            let dy = cy - p.y;
            let dy2 = dy * dy;
            let fi = i as f64;
            for ((b, o), &x) in best.iter_mut().zip(owner_f.iter_mut()).zip(&xs) {
                let dx = x - p.x;
                let d = dx * dx + dy2;
                let better = d < *b;
                *b = if better { d } else { *b };
                *o = if better { fi } else { *o };
            }
        }
        for (o, &f) in assignment[span].iter_mut().zip(&owner_f) {
            *o = f as u32;
        }
    }
    Ok(Partition {
        shape: *shape,
        sites: positions.to_vec(),
        assignment,
        dist_sq,
    })
}

/// Coverage cost in min form: Σ_q min_i f(‖p_i − q‖)·Φ(q)·cell_area.
pub fn coverage_cost(positions: &[Point], field: &GridField, penalty: &dyn DistancePenalty) -> Result<f64> {
    if positions.is_empty() {
        return Err(CoreError::Domain("coverage cost needs at least one robot".into()));
    }
    let shape = field.shape();
    let area = shape.cell_area();
    let mut acc = ExactSum::new();
    for (idx, &phi) in field.values().iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        let q = shape.cell_center(idx);
        let nearest = positions
            .iter()
            .map(|p| {
                let d = p - q;
                penalty.of_squared(d.x * d.x + d.y * d.y)
            })
            .fold(f64::INFINITY, f64::min);
        acc.add(nearest * phi * area);
    }
    Ok(acc.value())
}

/// Coverage cost in partition form: Σ_i Σ_{q ∈ P_i} f(‖p_i − q‖)·Φ(q)·cell_area.
/// Returns the total and the per-robot contributions.
pub fn partition_cost(
    partition: &Partition,
    field: &GridField,
    penalty: &dyn DistancePenalty,
) -> Result<(f64, Vec<f64>)> {
    check_shape(&partition.shape, field)?;
    let shape = partition.shape;
    let area = shape.cell_area();
    let values = field.values();
    let mut total = ExactSum::new();
    let mut per_robot = Vec::with_capacity(partition.num_robots());
    for (i, cells) in partition.robot_cells().into_iter().enumerate() {
        let p = partition.sites[i];
        let mut acc = ExactSum::new();
        for c in cells {
            if values[c] == 0.0 {
                continue;
            }
            let d = p - shape.cell_center(c);
            acc.add(penalty.of_squared(d.x * d.x + d.y * d.y) * values[c] * area);
        }
        per_robot.push(acc.value());
        total.merge(&acc);
    }
    Ok((total.value(), per_robot))
}

/// Mass and density-weighted centroid of one Voronoi region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMass {
    pub mass: f64,
    pub centroid: Point,
}

/// Per-robot mass and centroid of `field` over the partition. Regions with
/// zero mass report the robot's own position as centroid.
pub fn weighted_centroids(partition: &Partition, field: &GridField) -> Result<Vec<CellMass>> {
    accumulate_centroids(partition, field, None)
}

/// As [`weighted_centroids`], counting only cells set in `mask`.
pub fn weighted_centroids_masked(partition: &Partition, field: &GridField, mask: &BitSlice) -> Result<Vec<CellMass>> {
    if mask.len() != partition.shape.num_cells() {
        return Err(CoreError::Dimension("mask does not match grid".into()));
    }
    accumulate_centroids(partition, field, Some(mask))
}

fn accumulate_centroids(partition: &Partition, field: &GridField, mask: Option<&BitSlice>) -> Result<Vec<CellMass>> {
    check_shape(&partition.shape, field)?;
    let shape = partition.shape;
    let n = partition.num_robots();
    let mut sums = vec![[0.0f64; 3]; n];
    let values = field.values();
    let mut visit = |c: usize| {
        let phi = values[c];
        if phi != 0.0 {
            let (col, row) = shape.col_row(c);
            let s = &mut sums[partition.assignment[c] as usize];
            s[0] += phi;
            s[1] += shape.center_coord(col) * phi;
            s[2] += shape.center_coord(row) * phi;
        }
    };
    match mask {
        Some(m) => m.iter_ones().for_each(&mut visit),
        None => (0..shape.num_cells()).for_each(&mut visit),
    }
    Ok(sums
        .iter()
        .zip(&partition.sites)
        .map(|(s, site)| finish_centroid(*s, *site, shape.cell_area()))
        .collect())
}

pub(crate) fn finish_centroid(s: [f64; 3], site: Point, area: f64) -> CellMass {
    if s[0] > 0.0 {
        CellMass {
            mass: s[0] * area,
            centroid: Point::new(s[1] / s[0], s[2] / s[0]),
        }
    } else {
        CellMass {
            mass: 0.0,
            centroid: site,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{combined_field, generate_idf, world_rng, WorldConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_positions(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent)))
            .collect()
    }

    #[test]
    fn two_robots_split_the_grid_in_half() {
        let shape = GridShape::square(1024.0, 1.0);
        let p = partition(&[Point::new(256.0, 512.0), Point::new(768.0, 512.0)], &shape).unwrap();
        for row in [0, 500, 1023] {
            for col in 0..1024 {
                let expect = if col < 512 { 0 } else { 1 };
                assert_eq!(p.assignment()[shape.index(col, row)], expect);
            }
        }
    }

    #[test]
    fn equidistant_cells_go_to_lowest_index() {
        let shape = GridShape::new(4, 1, 1.0);
        // cell 1 center (1.5, 0.5) is equidistant from both robots
        let p = partition(&[Point::new(2.5, 0.5), Point::new(0.5, 0.5)], &shape).unwrap();
        assert_eq!(p.assignment(), &[1, 0, 0, 0]);
    }

    #[test]
    fn single_robot_owns_everything() {
        let shape = GridShape::square(16.0, 1.0);
        let p = partition(&[Point::new(3.0, 9.0)], &shape).unwrap();
        assert!(p.assignment().iter().all(|&a| a == 0));
        assert!(matches!(partition(&[], &shape), Err(CoreError::Domain(_))));
    }

    #[test]
    fn matches_brute_force_nearest_site() {
        let shape = GridShape::square(64.0, 1.0);
        let mut rng = world_rng(21);
        for _ in 0..10 {
            let pos = random_positions(&mut rng, 5, 64.0);
            let p = partition(&pos, &shape).unwrap();
            for c in 0..shape.num_cells() {
                let q = shape.cell_center(c);
                let mut best = 0;
                for i in 1..pos.len() {
                    if (pos[i] - q).norm_squared() < (pos[best] - q).norm_squared() {
                        best = i;
                    }
                }
                assert_eq!(p.assignment()[c] as usize, best);
            }
        }
    }

    #[test]
    fn cost_examples() {
        let shape = GridShape::new(2, 1, 1.0);
        let field = GridField::from_values(shape, vec![1.0, 1.0]).unwrap();
        // hand sum: 0² · 1 + 1² · 1
        let c = coverage_cost(&[Point::new(0.5, 0.5)], &field, &SquaredDistance).unwrap();
        assert_eq!(c, 1.0);

        let lone = GridField::from_values(shape, vec![0.0, 3.0]).unwrap();
        assert_eq!(
            coverage_cost(&[Point::new(1.5, 0.5)], &lone, &SquaredDistance).unwrap(),
            0.0
        );
        assert!(coverage_cost(&[], &lone, &SquaredDistance).is_err());
    }

    #[test]
    fn min_form_equals_partition_form() {
        let cfg = WorldConfig {
            env_size: 64.0,
            sensor_size: 8,
            ..WorldConfig::default()
        };
        let mut rng = world_rng(4);
        for _ in 0..20 {
            let field = generate_idf(&mut rng, &cfg);
            let pos = random_positions(&mut rng, 6, 64.0);
            let min_form = coverage_cost(&pos, &field, &SquaredDistance).unwrap();
            let part = partition(&pos, field.shape()).unwrap();
            let (total, per_robot) = partition_cost(&part, &field, &SquaredDistance).unwrap();
            assert_eq!(min_form.to_bits(), total.to_bits());
            assert_eq!(part.cost(&field, &SquaredDistance).unwrap().to_bits(), total.to_bits());
            assert_eq!(per_robot.len(), 6);
        }
    }

    #[test]
    fn centroid_examples() {
        let shape = GridShape::square(8.0, 1.0);
        let uniform = GridField::from_values(shape, vec![1.0; 64]).unwrap();
        let p = partition(&[Point::new(1.0, 6.0)], &shape).unwrap();
        let cm = weighted_centroids(&p, &uniform).unwrap();
        assert_eq!(cm[0].centroid, Point::new(4.0, 4.0));
        assert_eq!(cm[0].mass, 64.0);

        let zero = GridField::zeros(shape);
        let sites = [Point::new(1.0, 1.0), Point::new(7.0, 7.0)];
        let p = partition(&sites, &shape).unwrap();
        for (cm, site) in weighted_centroids(&p, &zero).unwrap().iter().zip(&sites) {
            assert_eq!(cm.mass, 0.0);
            assert_eq!(cm.centroid, *site);
        }

        let mut vals = vec![0.0; 64];
        vals[shape.index(2, 1)] = 1.0;
        let delta = GridField::from_values(shape, vals).unwrap();
        let cm = weighted_centroids(&p, &delta).unwrap();
        assert_eq!(cm[0].centroid, Point::new(2.5, 1.5));
        assert_eq!(cm[1].mass, 0.0);
    }

    #[test]
    fn weighted_costs_sum_to_combined_cost() {
        let cfg = WorldConfig {
            env_size: 64.0,
            sensor_size: 8,
            ..WorldConfig::default()
        };
        let mut rng = world_rng(99);
        let fields: Vec<_> = (0..3).map(|_| generate_idf(&mut rng, &cfg)).collect();
        let lambda = [0.2, 1.7, 0.0];
        let pos = random_positions(&mut rng, 4, 64.0);
        let lhs: f64 = fields
            .iter()
            .zip(lambda)
            .map(|(f, l)| l * coverage_cost(&pos, f, &SquaredDistance).unwrap())
            .sum();
        let rhs = coverage_cost(&pos, &combined_field(&fields, &lambda).unwrap(), &SquaredDistance).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    proptest! {
        #[test]
        fn cost_is_permutation_invariant(seed in 0u64..500) {
            let cfg = WorldConfig { env_size: 32.0, sensor_size: 8, ..WorldConfig::default() };
            let mut rng = world_rng(seed);
            let field = generate_idf(&mut rng, &cfg);
            let mut pos = random_positions(&mut rng, 5, 32.0);
            let a = coverage_cost(&pos, &field, &SquaredDistance).unwrap();
            pos.reverse();
            pos.swap(0, 2);
            prop_assert_eq!(a.to_bits(), coverage_cost(&pos, &field, &SquaredDistance).unwrap().to_bits());
        }

        #[test]
        fn cost_is_monotone_in_field(seed in 0u64..500, bump in 0.0f64..2.0) {
            let cfg = WorldConfig { env_size: 32.0, sensor_size: 8, ..WorldConfig::default() };
            let mut rng = world_rng(seed);
            let lo = generate_idf(&mut rng, &cfg);
            let extra = generate_idf(&mut rng, &cfg);
            let hi = combined_field(&[lo.clone(), extra], &[1.0, bump]).unwrap();
            let pos = random_positions(&mut rng, 3, 32.0);
            prop_assert!(
                coverage_cost(&pos, &lo, &SquaredDistance).unwrap()
                    <= coverage_cost(&pos, &hi, &SquaredDistance).unwrap()
            );
        }
    }
}
