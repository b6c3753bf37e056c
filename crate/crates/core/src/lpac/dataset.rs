//! Imitation dataset: clairvoyant rollouts recorded as LPAC inputs and
//! target velocities.
//!
//! ```text
//! COVERDUALS-DATASET
//! version 1
//! num_robots <N>
//! num_steps <S>
//! observation f32 4 32 32
//! target f32 2
//! end
//! ```
//!
//! followed by `S` little-endian step blocks, each:
//! `u32 step`, `u32 edge_count E`, `E × (u32 i, u32 j, f32 S_ij)` for the
//! undirected edges `i < j`, then `N` observations (row-major `f32`,
//! channel-major) and `N` targets `(vx, vy)` in robot order. One record is
//! one (step, robot) pair.

use std::io::{BufRead, BufReader, Read, Write};

use super::{LpacPolicy, Observation, OBS_CHANNELS, OBS_SIDE};
use crate::comms::{build_graph, shift_operator};
use crate::controllers::{clairvoyant_from_partition, ControlParams, Snapshot};
use crate::error::{CoreError, Result};
use crate::field::Point;
use crate::voronoi::partition;
use crate::world::{combined_field, World};

pub const DATASET_MAGIC: &str = "COVERDUALS-DATASET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStep {
    pub step: u32,
    pub edges: Vec<(u32, u32, f32)>,
    pub observations: Vec<Vec<f32>>,
    pub targets: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_robots: usize,
    pub steps: Vec<DatasetStep>,
}

impl Dataset {
    pub fn num_records(&self) -> usize {
        self.steps.iter().map(|s| s.targets.len()).sum()
    }
}

fn header(num_robots: usize, num_steps: usize) -> String {
    format!(
        "{DATASET_MAGIC}\nversion {DATASET_VERSION}\nnum_robots {num_robots}\nnum_steps {num_steps}\n\
         observation f32 {OBS_CHANNELS} {OBS_SIDE} {OBS_SIDE}\ntarget f32 2\nend\n"
    )
}

/// Rolls the clairvoyant controller forward on the `lambda`-combined field
/// for `steps` steps, writing one record per robot per step. Returns the
/// number of records.
pub fn export_imitation_dataset<W: Write>(
    world: &mut World,
    lambda: &[f64],
    steps: usize,
    mut out: W,
) -> Result<usize> {
    let combined = combined_field(&world.idfs, lambda)?;
    let params = ControlParams::from(&world.config);
    let n = world.num_robots();
    out.write_all(header(n, steps).as_bytes())?;
    let mut records = 0;
    for step in 0..steps {
        world.sense_all();
        let positions = world.positions();
        let graph = build_graph(&positions, world.config.comm_radius);
        let shift = shift_operator(&graph);
        let part = partition(&positions, &world.shape)?;
        let snap = Snapshot {
            shape: world.shape,
            params,
            comm_radius: world.config.comm_radius,
            robots: &world.robots,
            combined_true: &combined,
            partition: &part,
            graph: &graph,
            shift: &shift,
        };
        let observations = LpacPolicy::observations(&snap);
        let targets = clairvoyant_from_partition(&part, &combined, params)?;

        let mut block = Vec::new();
        block.extend_from_slice(&(step as u32).to_le_bytes());
        block.extend_from_slice(&(graph.edges().len() as u32).to_le_bytes());
        for &(i, j) in graph.edges() {
            let s = shift
                .row(i)
                .iter()
                .find(|(k, _)| *k == j)
                .map(|(_, v)| *v)
                .unwrap_or(0.0);
            block.extend_from_slice(&(i as u32).to_le_bytes());
            block.extend_from_slice(&(j as u32).to_le_bytes());
            block.extend_from_slice(&(s as f32).to_le_bytes());
        }
        for obs in &observations {
            for v in obs.as_slice() {
                block.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        for t in &targets {
            block.extend_from_slice(&(t.x as f32).to_le_bytes());
            block.extend_from_slice(&(t.y as f32).to_le_bytes());
        }
        out.write_all(&block)?;
        records += n;
        world.apply_actions(&targets)?;
    }
    out.flush()?;
    Ok(records)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = BufReader::new(input);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(CoreError::Format("dataset header ends early".into()));
        }
        let line = line.trim_end_matches('\n').to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let value = |key: &str| -> Result<usize> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|v| v.trim().parse().ok()))
            .ok_or_else(|| CoreError::Format(format!("dataset header lacks {key}")))
    };
    if lines.first().map(String::as_str) != Some(DATASET_MAGIC) {
        return Err(CoreError::Format("not an imitation dataset".into()));
    }
    if value("version ")? != DATASET_VERSION as usize {
        return Err(CoreError::Format("unsupported dataset version".into()));
    }
    let num_robots = value("num_robots ")?;
    let num_steps = value("num_steps ")?;
    let mut steps = Vec::with_capacity(num_steps);
    for _ in 0..num_steps {
        let step = read_u32(&mut reader)?;
        let edge_count = read_u32(&mut reader)? as usize;
        let mut edges = Vec::with_capacity(edge_count);
        for _ in 0..edge_count {
            edges.push((read_u32(&mut reader)?, read_u32(&mut reader)?, read_f32(&mut reader)?));
        }
        let mut observations = Vec::with_capacity(num_robots);
        for _ in 0..num_robots {
            let mut obs = Vec::with_capacity(Observation::LEN);
            for _ in 0..Observation::LEN {
                obs.push(read_f32(&mut reader)?);
            }
            observations.push(obs);
        }
        let mut targets = Vec::with_capacity(num_robots);
        for _ in 0..num_robots {
            targets.push([read_f32(&mut reader)?, read_f32(&mut reader)?]);
        }
        steps.push(DatasetStep {
            step,
            edges,
            observations,
            targets,
        });
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CoreError::Format(format!("{} trailing bytes in dataset", rest.len())));
    }
    Ok(Dataset { num_robots, steps })
}

impl DatasetStep {
    pub fn target(&self, robot: usize) -> Point {
        Point::new(self.targets[robot][0] as f64, self.targets[robot][1] as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{world_rng, WorldConfig};

    fn world(seed: u64) -> World {
        let cfg = WorldConfig {
            env_size: 128.0,
            num_robots: 4,
            num_idfs: 2,
            sensor_size: 16,
            comm_radius: 64.0,
            ..WorldConfig::default()
        };
        World::generate(&cfg, &mut world_rng(seed)).unwrap()
    }

    #[test]
    fn ten_steps_four_robots() {
        let mut buf = Vec::new();
        let n = export_imitation_dataset(&mut world(1), &[0.5, 0.5], 10, &mut buf).unwrap();
        assert_eq!(n, 40);
        let ds = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(ds.num_records(), 40);
        assert_eq!(ds.steps.len(), 10);
        for s in &ds.steps {
            for r in 0..4 {
                assert!(s.target(r).norm() <= 1.0 + 1e-6);
            }
        }
        let mut again = Vec::new();
        export_imitation_dataset(&mut world(1), &[0.5, 0.5], 10, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let mut buf = Vec::new();
        export_imitation_dataset(&mut world(2), &[1.0, 0.0], 2, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_dataset(buf.as_slice()).is_err());
    }
}
