//! Weight bundle: an ordered set of named `f32` tensors.
//!
//! File layout (all text lines `\n`-terminated, ASCII):
//!
//! ```text
//! COVERDUALS-WEIGHTS
//! version 1
//! tensors <count>
//! <name> <d0>x<d1>x... <byte offset into payload>
//! ...
//! end
//! <payload: little-endian f32, row-major, tensors back to back>
//! ```
//!
//! Linear weights are `[out, in]`, convolution kernels `[out, in, 3, 3]`,
//! graph filter taps `[in, out]` (features are right-multiplied).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use super::{
    CNN_CHANNELS, CNN_STAGES, FEATURE_DIM, GNN_HOPS, GNN_LAYERS, GNN_WIDTH, MLP_WIDTH, OBS_CHANNELS, OBS_SIDE,
};
use crate::error::{CoreError, Result};
use crate::world::world_rng;

pub const WEIGHTS_MAGIC: &str = "COVERDUALS-WEIGHTS";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every tensor of the network, in bundle order.
pub fn architecture() -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    for stage in 0..CNN_STAGES {
        let cin = if stage == 0 { OBS_CHANNELS } else { CNN_CHANNELS };
        specs.push(TensorSpec::new(
            format!("cnn.{stage}.conv.weight"),
            &[CNN_CHANNELS, cin, 3, 3],
        ));
        specs.push(TensorSpec::new(format!("cnn.{stage}.conv.bias"), &[CNN_CHANNELS]));
        for part in ["scale", "shift", "mean", "var"] {
            specs.push(TensorSpec::new(format!("cnn.{stage}.norm.{part}"), &[CNN_CHANNELS]));
        }
    }
    specs.push(TensorSpec::new(
        "cnn.linear.weight",
        &[FEATURE_DIM, CNN_CHANNELS * OBS_SIDE * OBS_SIDE],
    ));
    specs.push(TensorSpec::new("cnn.linear.bias", &[FEATURE_DIM]));
    for layer in 0..GNN_LAYERS {
        let fan_in = if layer == 0 { FEATURE_DIM } else { GNN_WIDTH };
        for tap in 0..=GNN_HOPS {
            specs.push(TensorSpec::new(format!("gnn.{layer}.tap.{tap}"), &[fan_in, GNN_WIDTH]));
        }
    }
    specs.push(TensorSpec::new("mlp.0.weight", &[MLP_WIDTH, GNN_WIDTH]));
    specs.push(TensorSpec::new("mlp.0.bias", &[MLP_WIDTH]));
    specs.push(TensorSpec::new("mlp.1.weight", &[MLP_WIDTH, MLP_WIDTH]));
    specs.push(TensorSpec::new("mlp.1.bias", &[MLP_WIDTH]));
    specs.push(TensorSpec::new("head.weight", &[2, MLP_WIDTH]));
    specs.push(TensorSpec::new("head.bias", &[2]));
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    tensors: Vec<NamedTensor>,
}

fn fan_in(spec: &TensorSpec) -> usize {
    match spec.shape.as_slice() {
        [_, cin, kh, kw] => cin * kh * kw,
        [a, _] if spec.name.starts_with("gnn.") => *a,
        [_, b] => *b,
        _ => 1,
    }
}

impl WeightBundle {
    /// All parameters zero, normalization statistics neutral (var = 1).
    pub fn zeros() -> Self {
        let tensors = architecture()
            .into_iter()
            .map(|s| {
                let fill = if s.name.ends_with("norm.var") || s.name.ends_with("norm.scale") {
                    1.0
                } else {
                    0.0
                };
                NamedTensor {
                    data: vec![fill; s.len()],
                    name: s.name,
                    shape: s.shape,
                }
            })
            .collect();
        Self { tensors }
    }

    /// Uniform `±1/√fan_in` weights and biases; normalization stats drawn
    /// near identity. Deterministic in `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = world_rng(seed);
        let tensors = architecture()
            .into_iter()
            .map(|s| {
                let n = s.len();
                let data: Vec<f32> = if s.name.ends_with("norm.var") {
                    (0..n).map(|_| rng.random_range(0.5f32..1.5)).collect()
                } else if s.name.ends_with("norm.scale") {
                    (0..n).map(|_| rng.random_range(0.8f32..1.2)).collect()
                } else if s.name.ends_with("norm.shift") || s.name.ends_with("norm.mean") {
                    (0..n).map(|_| rng.random_range(-0.1f32..0.1)).collect()
                } else {
                    let bound = 1.0 / (fan_in(&s) as f32).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                NamedTensor {
                    name: s.name,
                    shape: s.shape,
                    data,
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Checks names, order and shapes against [`architecture`].
    pub fn validate(&self) -> Result<()> {
        let specs = architecture();
        if specs.len() != self.tensors.len() {
            return Err(CoreError::Format(format!(
                "bundle has {} tensors, architecture needs {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape {
                return Err(CoreError::Format(format!(
                    "expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, t.name, t.shape
                )));
            }
            if t.data.len() != spec.len() {
                return Err(CoreError::Format(format!(
                    "{}: {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Format(format!("{} holds non-finite values", t.name)));
            }
            if t.name.ends_with("norm.var") && t.data.iter().any(|v| *v <= 0.0) {
                return Err(CoreError::Format(format!("{} must be positive", t.name)));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = format!(
            "{WEIGHTS_MAGIC}\nversion {WEIGHTS_VERSION}\ntensors {}\n",
            self.tensors.len()
        );
        let mut offset = 0usize;
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("{} {} {}\n", t.name, dims.join("x"), offset));
            offset += t.data.len() * 4;
        }
        header.push_str("end\n");
        out.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(offset);
        for t in &self.tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parses and validates a bundle.
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(CoreError::Format("weight manifest ends early".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut reader)? != WEIGHTS_MAGIC {
            return Err(CoreError::Format("not a weight bundle".into()));
        }
        let version = next_line(&mut reader)?;
        if version != format!("version {WEIGHTS_VERSION}") {
            return Err(CoreError::Format(format!("unsupported bundle {version:?}")));
        }
        let count: usize = next_line(&mut reader)?
            .strip_prefix("tensors ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| CoreError::Format("missing tensor count".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(&mut reader)?;
            let parts: Vec<&str> = l.split(' ').collect();
            let bad = || CoreError::Format(format!("bad manifest line {l:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let shape = parts[1]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            let offset: usize = parts[2].parse().map_err(|_| bad())?;
            entries.push((parts[0].to_string(), shape, offset));
        }
        if next_line(&mut reader)? != "end" {
            return Err(CoreError::Format("manifest not terminated by `end`".into()));
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let mut expected_offset = 0usize;
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset) in entries {
            let len: usize = shape.iter().product();
            if offset != expected_offset || offset + len * 4 > payload.len() {
                return Err(CoreError::Format(format!(
                    "{name}: payload offset {offset} out of place"
                )));
            }
            let data = payload[offset..offset + len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_offset += len * 4;
            tensors.push(NamedTensor { name, shape, data });
        }
        if expected_offset != payload.len() {
            return Err(CoreError::Format(format!(
                "{} trailing payload bytes",
                payload.len() - expected_offset
            )));
        }
        let bundle = Self { tensors };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_table() {
        let specs = architecture();
        assert_eq!(specs.len(), 3 * 6 + 2 + 5 * 4 + 6);
        let gnn: Vec<_> = specs.iter().filter(|s| s.name.starts_with("gnn.")).collect();
        assert_eq!(gnn[0].shape, vec![32, 512]);
        assert!(gnn[4..].iter().all(|s| s.shape == vec![512, 512]));
        assert_eq!(
            specs.iter().find(|s| s.name == "head.weight").unwrap().shape,
            vec![2, 32]
        );
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bundle = WeightBundle::random(3);
        bundle.validate().unwrap();
        let mut a = Vec::new();
        bundle.write(&mut a).unwrap();
        let back = WeightBundle::read(a.as_slice()).unwrap();
        assert_eq!(back, bundle);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_bad_shapes_and_statistics() {
        let mut bundle = WeightBundle::zeros();
        bundle.get_mut("mlp.1.bias").unwrap().shape = vec![31];
        bundle.get_mut("mlp.1.bias").unwrap().data.pop();
        let mut buf = Vec::new();
        bundle.write(&mut buf).unwrap();
        assert!(matches!(WeightBundle::read(buf.as_slice()), Err(CoreError::Format(_))));

        let mut bundle = WeightBundle::zeros();
        bundle.get_mut("cnn.1.norm.var").unwrap().data[3] = 0.0;
        assert!(bundle.validate().is_err());

        let mut buf = Vec::new();
        WeightBundle::zeros().write(&mut buf).unwrap();
        buf.pop();
        assert!(WeightBundle::read(buf.as_slice()).is_err());
        assert!(WeightBundle::read(&b"COVERDUALS-WEIGHTS\nversion 2\n"[..]).is_err());
    }
}
