use super::{
    build_observation, Observation, WeightBundle, CNN_CHANNELS, CNN_STAGES, FEATURE_DIM, GNN_HOPS, GNN_LAYERS,
    GNN_WIDTH, LEAKY_SLOPE, MLP_WIDTH, NORM_EPS, OBS_CHANNELS, OBS_SIDE,
};
use crate::comms::ShiftOperator;
use crate::controllers::{Policy, Snapshot};
use crate::error::{CoreError, Result};
use crate::field::Point;
use crate::world::clip_speed;

#[inline]
fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[derive(Debug, Clone)]
struct ConvStage {
    cin: usize,
    /// `[out][in][3][3]`
    kernel: Vec<f64>,
    bias: Vec<f64>,
    scale: Vec<f64>,
    shift: Vec<f64>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    /// Row-major `[rows][cols]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let row = &self.weight[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[r]
            })
            .collect()
    }
}

/// Immutable `f64` copy of a validated [`WeightBundle`].
#[derive(Debug, Clone)]
pub struct LpacNet {
    conv: Vec<ConvStage>,
    perception: Dense,
    /// `taps[layer][k]`: row-major `[in][GNN_WIDTH]`.
    taps: Vec<Vec<Vec<f64>>>,
    mlp: [Dense; 2],
    head: Dense,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

impl LpacNet {
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        bundle.validate()?;
        let t = |name: String| -> Result<Vec<f64>> {
            bundle
                .get(&name)
                .map(|t| widen(&t.data))
                .ok_or_else(|| CoreError::Format(format!("missing tensor {name}")))
        };
        let conv = (0..CNN_STAGES)
            .map(|s| {
                Ok(ConvStage {
                    cin: if s == 0 { OBS_CHANNELS } else { CNN_CHANNELS },
                    kernel: t(format!("cnn.{s}.conv.weight"))?,
                    bias: t(format!("cnn.{s}.conv.bias"))?,
                    scale: t(format!("cnn.{s}.norm.scale"))?,
                    shift: t(format!("cnn.{s}.norm.shift"))?,
                    mean: t(format!("cnn.{s}.norm.mean"))?,
                    inv_std: t(format!("cnn.{s}.norm.var"))?
                        .iter()
                        .map(|v| 1.0 / (v + NORM_EPS).sqrt())
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dense = |name: &str, rows: usize, cols: usize| -> Result<Dense> {
            Ok(Dense {
                rows,
                cols,
                weight: t(format!("{name}.weight"))?,
                bias: t(format!("{name}.bias"))?,
            })
        };
        let taps = (0..GNN_LAYERS)
            .map(|l| (0..=GNN_HOPS).map(|k| t(format!("gnn.{l}.tap.{k}"))).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            conv,
            perception: dense("cnn.linear", FEATURE_DIM, CNN_CHANNELS * OBS_SIDE * OBS_SIDE)?,
            taps,
            mlp: [
                dense("mlp.0", MLP_WIDTH, GNN_WIDTH)?,
                dense("mlp.1", MLP_WIDTH, MLP_WIDTH)?,
            ],
            head: dense("head", 2, MLP_WIDTH)?,
        })
    }

    /// Three conv → normalize (stored statistics) → leaky ReLU stages, then
    /// flatten, linear and leaky ReLU to a 32-vector.
    pub fn cnn_forward(&self, obs: &Observation) -> Vec<f64> {
        let mut x = obs.as_slice().to_vec();
        for stage in &self.conv {
            x = conv3x3(&x, stage);
        }
        self.perception.apply(&x).into_iter().map(leaky).collect()
    }

    /// Five graph-filter layers `X_l = ReLU(Σ_k S^k X_{l−1} H_{lk})` over a
    /// row-major `N × 32` feature matrix. Powers of `S` are applied by
    /// repeated propagation.
    pub fn gnn_forward(&self, features: &[f64], shift: &ShiftOperator) -> Result<Vec<f64>> {
        let n = shift.num_nodes();
        if features.len() != n * FEATURE_DIM {
            return Err(CoreError::Dimension(format!(
                "{} feature values for {} nodes of width {}",
                features.len(),
                n,
                FEATURE_DIM
            )));
        }
        let mut x = features.to_vec();
        let mut width = FEATURE_DIM;
        for layer in &self.taps {
            let mut z = vec![0.0; n * GNN_WIDTH];
            let mut y = x;
            for (k, tap) in layer.iter().enumerate() {
                if k > 0 {
                    y = shift.apply(&y, width);
                }
                accumulate_matmul(&mut z, &y, tap, n, width, GNN_WIDTH);
            }
            for v in &mut z {
                *v = v.max(0.0);
            }
            x = z;
            width = GNN_WIDTH;
        }
        Ok(x)
    }

    /// 512 → 32 → 32 with leaky ReLU, then a linear map to `(vx, vy)`.
    /// The result is not speed-clipped.
    pub fn mlp_forward(&self, node: &[f64]) -> Point {
        let h: Vec<f64> = self.mlp[0].apply(node).into_iter().map(leaky).collect();
        let h: Vec<f64> = self.mlp[1].apply(&h).into_iter().map(leaky).collect();
        let out = self.head.apply(&h);
        Point::new(out[0], out[1])
    }

    /// Observations of all robots through the whole pipeline, clipped.
    pub fn forward(&self, observations: &[Observation], shift: &ShiftOperator, max_speed: f64) -> Result<Vec<Point>> {
        let mut features = Vec::with_capacity(observations.len() * FEATURE_DIM);
        for obs in observations {
            features.extend(self.cnn_forward(obs));
        }
        let hidden = self.gnn_forward(&features, shift)?;
        Ok(hidden
            .chunks_exact(GNN_WIDTH)
            .map(|h| clip_speed(self.mlp_forward(h), max_speed))
            .collect())
    }
}

/// `z += y · h` with `y: n × k`, `h: k × m`, all row-major.
fn accumulate_matmul(z: &mut [f64], y: &[f64], h: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let zi = &mut z[i * m..(i + 1) * m];
        for (a, &ya) in y[i * k..(i + 1) * k].iter().enumerate() {
            if ya == 0.0 {
                continue;
            }
            for (zv, hv) in zi.iter_mut().zip(&h[a * m..(a + 1) * m]) {
                *zv += ya * hv;
            }
        }
    }
}

/// 3×3, stride 1, zero padding 1, followed by normalization and leaky ReLU.
fn conv3x3(input: &[f64], stage: &ConvStage) -> Vec<f64> {
    const S: usize = OBS_SIDE;
    let mut out = vec![0.0; CNN_CHANNELS * S * S];
    for o in 0..CNN_CHANNELS {
        let plane = &mut out[o * S * S..(o + 1) * S * S];
        for c in 0..stage.cin {
            let src = &input[c * S * S..(c + 1) * S * S];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = stage.kernel[((o * stage.cin + c) * 3 + ky) * 3 + kx];
                    if w == 0.0 {
                        continue;
                    }
                    // output (y, x) reads input (y + ky − 1, x + kx − 1)
                    let ys = if ky == 0 { 1 } else { 0 }..if ky == 2 { S - 1 } else { S };
                    let xs = if kx == 0 { 1 } else { 0 }..if kx == 2 { S - 1 } else { S };
                    for y in ys {
                        let sy = y + ky - 1;
                        let drow = &mut plane[y * S..(y + 1) * S];
                        let srow = &src[sy * S..(sy + 1) * S];
                        for x in xs.clone() {
                            drow[x] += w * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
        for v in plane.iter_mut() {
            let pre = *v + stage.bias[o];
            *v = leaky((pre - stage.mean[o]) * stage.inv_std[o] * stage.scale[o] + stage.shift[o]);
        }
    }
    out
}

/// [`Policy`] adapter: observation per robot, then the full network.
#[derive(Debug, Clone)]
pub struct LpacPolicy {
    net: LpacNet,
}

impl LpacPolicy {
    pub fn new(net: LpacNet) -> Self {
        Self { net }
    }

    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        Ok(Self::new(LpacNet::from_bundle(bundle)?))
    }

    pub fn net(&self) -> &LpacNet {
        &self.net
    }

    pub fn observations(snap: &Snapshot<'_>) -> Vec<Observation> {
        (0..snap.robots.len())
            .map(|i| {
                let robot = &snap.robots[i];
                let neighbors: Vec<Point> = snap
                    .graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| snap.robots[j].position)
                    .collect();
                build_observation(
                    robot.position,
                    snap.own_map(i),
                    &robot.boundary,
                    &neighbors,
                    snap.comm_radius,
                )
            })
            .collect()
    }
}

impl Policy for LpacPolicy {
    fn name(&self) -> &str {
        "lpac"
    }

    fn compute_actions(&mut self, snap: &Snapshot<'_>) -> Result<Vec<Point>> {
        let obs = Self::observations(snap);
        self.net.forward(&obs, snap.shift, snap.params.max_speed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comms::{build_graph, shift_operator, CommGraph};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn set(bundle: &mut WeightBundle, name: &str, idx: usize, v: f32) {
        bundle.get_mut(name).unwrap().data[idx] = v;
    }

    /// Direct-definition zero-padded 3×3 convolution of one input plane.
    fn reference_conv(input: &[f64], side: usize, k: &[f64; 9]) -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for y in 0..side as i64 {
            for x in 0..side as i64 {
                let mut acc = 0.0;
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        let (sy, sx) = (y + ky - 1, x + kx - 1);
                        if sy >= 0 && sx >= 0 && sy < side as i64 && sx < side as i64 {
                            acc += k[(ky * 3 + kx) as usize] * input[(sy * side as i64 + sx) as usize];
                        }
                    }
                }
                out[(y * side as i64 + x) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = LpacNet::from_bundle(&WeightBundle::zeros()).unwrap();
        let f = net.cnn_forward(&Observation::zeros());
        assert_eq!(f, vec![0.0; FEATURE_DIM]);
        assert_eq!(net.mlp_forward(&vec![0.0; GNN_WIDTH]), Point::zeros());
        let random = LpacNet::from_bundle(&WeightBundle::random(1)).unwrap();
        let mut rng = crate::world::world_rng(2);
        let obs = Observation::from_vec((0..Observation::LEN).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        assert_eq!(random.cnn_forward(&obs).len(), FEATURE_DIM);
    }

    #[test]
    fn convolution_matches_direct_definition() {
        // Single-tap kernels route one channel through each stage; with
        // identity normalization the first output plane is the convolution
        // oracle applied three times, passed through leaky ReLU.
        let mut b = WeightBundle::zeros();
        let k0 = [0.0, 0.0, 0.0, 0.0, 2.0, -1.0, 0.0, 0.5, 0.0];
        for (i, v) in k0.iter().enumerate() {
            set(&mut b, "cnn.0.conv.weight", i, *v as f32);
        }
        set(&mut b, "cnn.1.conv.weight", 4, 1.0);
        set(&mut b, "cnn.2.conv.weight", 4, 1.0);
        for s in 0..3 {
            for c in 0..CNN_CHANNELS {
                set(&mut b, &format!("cnn.{s}.norm.var"), c, (1.0 - NORM_EPS) as f32);
            }
        }
        // perception reads final pixel (channel 0, row 0, col 1)
        set(&mut b, "cnn.linear.weight", 1, 1.0);
        let net = LpacNet::from_bundle(&b).unwrap();

        let mut input = vec![0.0; Observation::LEN];
        input[OBS_SIDE + 1] = 3.0; // one nonzero pixel in channel 0
        let obs = Observation::from_vec(input.clone()).unwrap();
        let reference = reference_conv(&input[..OBS_SIDE * OBS_SIDE], OBS_SIDE, &k0);
        let expect: Vec<f64> = reference.iter().map(|v| leaky(*v)).collect();

        let stage0 = conv3x3(obs.as_slice(), &net.conv[0]);
        for (a, e) in stage0[..OBS_SIDE * OBS_SIDE].iter().zip(&expect) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        // hand values in the top-left 4×4 block
        assert!((expect[OBS_SIDE + 1] - 6.0).abs() < 1e-12);
        assert!((expect[OBS_SIDE] + 0.03).abs() < 1e-12);
        assert!((expect[1] - 1.5).abs() < 1e-12);
        assert!(expect[2 * OBS_SIDE + 3] == 0.0);
        let f = net.cnn_forward(&obs);
        assert!((f[0] - 1.5).abs() < 1e-5, "{}", f[0]);
        assert!(f[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mlp_with_selection_weights() {
        let mut b = WeightBundle::zeros();
        // h1[0] = x[7], h1[1] = x[300]; h2 = h1; out = (h2[0], h2[1])
        set(&mut b, "mlp.0.weight", 7, 1.0);
        set(&mut b, "mlp.0.weight", GNN_WIDTH + 300, 1.0);
        set(&mut b, "mlp.1.weight", 0, 1.0);
        set(&mut b, "mlp.1.weight", MLP_WIDTH + 1, 1.0);
        set(&mut b, "head.weight", 0, 1.0);
        set(&mut b, "head.weight", MLP_WIDTH + 1, 1.0);
        let net = LpacNet::from_bundle(&b).unwrap();
        let mut x = vec![0.0; GNN_WIDTH];
        x[7] = 0.75;
        x[300] = 2.0;
        assert_eq!(net.mlp_forward(&x), Point::new(0.75, 2.0));
    }

    fn dense_gnn(net: &LpacNet, x: &[f64], s: &DMatrix<f64>) -> Vec<f64> {
        let n = s.nrows();
        let mut x = DMatrix::from_row_slice(n, FEATURE_DIM, x);
        for layer in &net.taps {
            let width = x.ncols();
            let mut z = DMatrix::zeros(n, GNN_WIDTH);
            let mut power = DMatrix::identity(n, n);
            for tap in layer {
                let h = DMatrix::from_row_slice(width, GNN_WIDTH, tap);
                z += &power * &x * h;
                power = &power * s;
            }
            x = z.map(|v| v.max(0.0));
        }
        x.transpose().as_slice().to_vec()
    }

    #[test]
    fn gnn_iterated_equals_dense_powers() {
        let net = LpacNet::from_bundle(&WeightBundle::random(5)).unwrap();
        let mut rng = crate::world::world_rng(6);
        for n in [1usize, 3, 8] {
            let pos: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                .collect();
            let s = shift_operator(&build_graph(&pos, 50.0));
            let x: Vec<f64> = (0..n * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = net.gnn_forward(&x, &s).unwrap();
            let slow = dense_gnn(&net, &x, &s.dense());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
        assert!(net
            .gnn_forward(&[0.0; 5], &shift_operator(&CommGraph::from_edges(1, vec![])))
            .is_err());
    }

    #[test]
    fn gnn_two_node_hand_expansion() {
        // 1×1 weights on coordinate 0, identity-like across layers.
        let mut b = WeightBundle::zeros();
        let taps = [1.0f32, 2.0, 3.0, 4.0];
        for (k, v) in taps.iter().enumerate() {
            set(&mut b, &format!("gnn.0.tap.{k}"), 0, *v);
        }
        for l in 1..GNN_LAYERS {
            set(&mut b, &format!("gnn.{l}.tap.0"), 0, 1.0);
        }
        let net = LpacNet::from_bundle(&b).unwrap();
        let s = shift_operator(&CommGraph::from_edges(2, vec![(0, 1)]));
        let mut x = vec![0.0; 2 * FEATURE_DIM];
        x[0] = 1.0;
        x[FEATURE_DIM] = -0.5;
        // S = [[0,1],[1,0]]: S x = (-0.5, 1), S² x = x, S³ x = S x
        let z0 = 1.0 * 1.0 + 2.0 * -0.5 + 3.0 * 1.0 + 4.0 * -0.5;
        let z1 = 1.0 * -0.5 + 2.0 * 1.0 + 3.0 * -0.5 + 4.0 * 1.0;
        let out = net.gnn_forward(&x, &s).unwrap();
        assert_eq!(out[0], f64::max(z0, 0.0));
        assert_eq!(out[GNN_WIDTH], f64::max(z1, 0.0));
        assert!(out[1..GNN_WIDTH].iter().all(|v| *v == 0.0));

        // empty graph: only the k = 0 tap survives
        let empty = shift_operator(&CommGraph::from_edges(2, vec![]));
        let out = net.gnn_forward(&x, &empty).unwrap();
        assert_eq!(out[0], 1.0);
        assert_eq!(out[GNN_WIDTH], 0.0);
    }
}
