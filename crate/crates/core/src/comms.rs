//! Communication graph and its normalized shift operator.

use nalgebra::DMatrix;

use crate::field::Point;

/// Undirected disk graph over robot positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    num_nodes: usize,
    /// Edges `(i, j)` with `i < j`, lexicographically ordered.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn from_edges(num_nodes: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.retain(|(i, j)| i != j && *j < num_nodes);
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Self {
            num_nodes,
            edges,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_nodes, self.num_nodes);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }
}

/// Links every pair with `‖p_i − p_j‖ ≤ r_c`.
pub fn build_graph(positions: &[Point], comm_radius: f64) -> CommGraph {
    let r2 = comm_radius * comm_radius;
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if (positions[i] - positions[j]).norm_squared() <= r2 {
                edges.push((i, j));
            }
        }
    }
    CommGraph::from_edges(positions.len(), edges)
}

/// Sparse `S = D^{-1/2} A D^{-1/2}`. Isolated nodes have an empty row.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl ShiftOperator {
    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut s = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                s[(i, j)] = v;
            }
        }
        s
    }

    /// `S·X` for a row-major `N × width` feature matrix.
    pub fn apply(&self, x: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows.len() * width);
        let mut out = vec![0.0; x.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let dst = &mut out[i * width..(i + 1) * width];
            for &(j, s) in row {
                for (d, v) in dst.iter_mut().zip(&x[j * width..(j + 1) * width]) {
                    *d += s * v;
                }
            }
        }
        out
    }
}

pub fn shift_operator(graph: &CommGraph) -> ShiftOperator {
    let inv_sqrt: Vec<f64> = (0..graph.num_nodes())
        .map(|i| match graph.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let rows = (0..graph.num_nodes())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&j| (j, inv_sqrt[i] * inv_sqrt[j]))
                .collect()
        })
        .collect();
    ShiftOperator { rows }
}
