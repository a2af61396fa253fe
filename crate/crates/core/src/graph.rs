//! Weighted graphs and their generators.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
    pub sqrt_omega: f64,
}

/// Undirected connected graph with symmetric positive edge weights.
///
/// Vertices are 0-indexed. Each unordered edge is stored once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    omega: Vec<f64>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<usize>>,
    omega_min: f64,
    omega_max: f64,
}

impl WeightedGraph {
    /// Builds a graph from `(i, j, omega)` triples with 0-indexed vertices.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 vertices, got {n}")));
        }
        let mut omega = vec![0.0; n * n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a vertex outside 1..={n}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {}", a + 1)));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has non-positive or non-finite weight {w}",
                    a + 1,
                    b + 1
                )));
            }
            if omega[a * n + b] != 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    a.min(b) + 1,
                    a.max(b) + 1
                )));
            }
            omega[a * n + b] = w;
            omega[b * n + a] = w;
        }
        let mut list = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let w = omega[i * n + j];
                if w > 0.0 {
                    neighbors[i].push(j);
                    if i < j {
                        list.push(Edge { i, j, omega: w, sqrt_omega: w.sqrt() });
                    }
                }
            }
        }
        if list.is_empty() {
            return Err(Error::InvalidGraph("no edges".into()));
        }
        let omega_min = list.iter().map(|e| e.omega).fold(f64::INFINITY, f64::min);
        let omega_max = list.iter().map(|e| e.omega).fold(0.0, f64::max);
        let g = Self { n, omega, edges: list, neighbors, omega_min, omega_max };
        if g.distances_from(0).iter().any(|d| d.is_none()) {
            return Err(Error::NotConnected);
        }
        Ok(g)
    }

    pub fn path(n: usize) -> Result<Self> {
        let e: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1, 1.0)).collect();
        Self::new(n, &e)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        Self::cycle_weighted(n, 1.0)
    }

    pub fn cycle_weighted(n: usize, w: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph(format!("cycle needs n >= 3, got {n}")));
        }
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, w)).collect();
        Self::new(n, &e)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j, 1.0));
            }
        }
        Self::new(n, &e)
    }

    /// Periodic nearest-neighbour grid with side lengths `dims` and weight `1/h^2`.
    pub fn torus(dims: &[usize], h: f64) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d < 3) {
            return Err(Error::InvalidGraph("torus sides must all be >= 3".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGraph(format!("torus mesh size must be positive, got {h}")));
        }
        let w = 1.0 / (h * h);
        let n: usize = dims.iter().product();
        let mut e = Vec::new();
        let mut coord = vec![0usize; dims.len()];
        for v in 0..n {
            let mut r = v;
            for (k, &d) in dims.iter().enumerate() {
                coord[k] = r % d;
                r /= d;
            }
            let mut stride = 1;
            for (k, &d) in dims.iter().enumerate() {
                let next = (coord[k] + 1) % d;
                let u = v - coord[k] * stride + next * stride;
                e.push((v, u, w));
                stride *= d;
            }
        }
        Self::new(n, &e)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn omega(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.n + j]
    }

    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn max_weighted_degree(&self) -> f64 {
        (0..self.n)
            .map(|i| self.neighbors[i].iter().map(|&j| self.omega(i, j)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Hop distances from `src`; `None` for unreachable vertices.
    pub fn distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or(0);
            for &u in &self.neighbors[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Edges of a breadth-first spanning tree rooted at vertex 0, as `(parent, child)`.
    pub fn spanning_tree(&self) -> Vec<(usize, usize)> {
        let mut seen = vec![false; self.n];
        seen[0] = true;
        let mut out = Vec::with_capacity(self.n - 1);
        let mut queue = VecDeque::from([0]);
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    out.push((v, u));
                    queue.push_back(u);
                }
            }
        }
        out
    }
}

/// JSON graph description. Vertices are 1-indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Generator {
        generator: String,
        #[serde(default)]
        params: GeneratorParams,
    },
    Explicit {
        n: usize,
        edges: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

pub const GENERATORS: [(&str, &str); 4] = [
    ("path", "path P_n with unit weights; params: n"),
    ("cycle", "cycle C_n; params: n, optional weight (default 1)"),
    ("complete", "complete graph K_n with unit weights; params: n"),
    ("torus", "periodic grid with weight 1/h^2; params: dims, optional h (default 1/dims[0])"),
];

impl GraphSpec {
    pub fn build(&self) -> Result<WeightedGraph> {
        match self {
            GraphSpec::Explicit { n, edges } => {
                let mut e = Vec::with_capacity(edges.len());
                for &(i, j, w) in edges {
                    if i == 0 || j == 0 {
                        return Err(Error::InvalidGraph(format!(
                            "edge ({i}, {j}): vertices are 1-indexed"
                        )));
                    }
                    e.push((i - 1, j - 1, w));
                }
                WeightedGraph::new(*n, &e)
            }
            GraphSpec::Generator { generator, params } => {
                let need_n = || {
                    params.n.ok_or_else(|| {
                        Error::InvalidGraph(format!("generator '{generator}' needs params.n"))
                    })
                };
                match generator.as_str() {
                    "path" => WeightedGraph::path(need_n()?),
                    "cycle" => WeightedGraph::cycle_weighted(need_n()?, params.weight.unwrap_or(1.0)),
                    "complete" => WeightedGraph::complete(need_n()?),
                    "torus" => {
                        let dims = params.dims.clone().ok_or_else(|| {
                            Error::InvalidGraph("generator 'torus' needs params.dims".into())
                        })?;
                        let h = params.h.unwrap_or(1.0 / dims.first().copied().unwrap_or(1) as f64);
                        WeightedGraph::torus(&dims, h)
                    }
                    other => Err(Error::InvalidGraph(format!("unknown generator '{other}'"))),
                }
            }
        }
    }
}
