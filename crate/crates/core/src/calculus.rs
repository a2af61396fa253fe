//! Discrete calculus on a weighted graph: gradient, divergence, Laplacian and
//! the inner products on edge fields.

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::theta::theta_unchecked;

/// Skew-symmetric array indexed by ordered vertex pairs, supported on edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    n: usize,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; n * n] }
    }

    /// Field with `m^{ij} = f(edge)` for every stored edge `i < j`.
    pub fn from_edges(g: &WeightedGraph, mut f: impl FnMut(usize, &crate::graph::Edge) -> f64) -> Self {
        let mut m = Self::zeros(g.n());
        for (k, e) in g.edges().iter().enumerate() {
            m.set(e.i, e.j, f(k, e));
        }
        m
    }

    /// Builds a field from a full `n x n` row-major array, checking skew-symmetry and support.
    pub fn from_dense(g: &WeightedGraph, values: Vec<f64>) -> Result<Self> {
        let n = g.n();
        if values.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: values.len() });
        }
        for i in 0..n {
            for j in 0..n {
                let a = values[i * n + j];
                if g.omega(i, j) == 0.0 && a != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "edge field is nonzero off the edge set at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                let b = values[j * n + i];
                if (a + b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "edge field is not skew-symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Sets `m^{ij} = v` and `m^{ji} = -v`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = -v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Values on the stored edges, in edge-list order.
    pub fn edge_values(&self, g: &WeightedGraph) -> Vec<f64> {
        g.edges().iter().map(|e| self.get(e.i, e.j)).collect()
    }

    pub fn from_edge_values(g: &WeightedGraph, vals: &[f64]) -> Self {
        Self::from_edges(g, |k, _| vals[k])
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| a * v).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Strictly positive probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        Self::with_floor(mu, 0.0)
    }

    /// Requires every component to exceed `eps`.
    pub fn with_floor(mu: Vec<f64>, eps: f64) -> Result<Self> {
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSimplex(format!("components sum to {total}")));
        }
        if let Some((i, v)) = mu.iter().enumerate().find(|(_, v)| !(**v > eps)) {
            return Err(Error::InvalidSimplex(format!(
                "component {} is {v}, must exceed {eps}",
                i + 1
            )));
        }
        Ok(Self(mu))
    }

    /// Normalizes a positive vector onto the simplex.
    pub fn normalized(w: &[f64]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidSimplex("weights must be positive".into()));
        }
        Ok(Self(w.iter().map(|v| v / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Vector with zero component sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let total: f64 = v.iter().sum();
        let scale = v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        if total.abs() > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!("tangent vector sums to {total}")));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_len(g: &WeightedGraph, len: usize) -> Result<()> {
    if len != g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), got: len });
    }
    Ok(())
}

/// `(grad u)^{ij} = sqrt(w_ij) (u^i - u^j)`.
pub fn grad(g: &WeightedGraph, u: &[f64]) -> Result<EdgeField> {
    check_len(g, u.len())?;
    Ok(grad_unchecked(g, u))
}

pub(crate) fn grad_unchecked(g: &WeightedGraph, u: &[f64]) -> EdgeField {
    EdgeField::from_edges(g, |_, e| e.sqrt_omega * (u[e.i] - u[e.j]))
}

/// `(div m)^i = sum_j sqrt(w_ij) m^{ji}`.
pub fn div(g: &WeightedGraph, m: &EdgeField) -> Result<Vec<f64>> {
    check_len(g, m.n())?;
    Ok(div_unchecked(g, m))
}

pub(crate) fn div_unchecked(g: &WeightedGraph, m: &EdgeField) -> Vec<f64> {
    let mut out = vec![0.0; g.n()];
    for e in g.edges() {
        let flux = e.sqrt_omega * m.get(e.j, e.i);
        out[e.i] += flux;
        out[e.j] -= flux;
    }
    out
}

/// `(Lap u)^i = sum_j w_ij (u^j - u^i)`.
pub fn laplacian(g: &WeightedGraph, u: &[f64]) -> Result<Vec<f64>> {
    check_len(g, u.len())?;
    Ok(laplacian_unchecked(g, u))
}

pub(crate) fn laplacian_unchecked(g: &WeightedGraph, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n()];
    laplacian_into(g, u, &mut out);
    out
}

pub(crate) fn laplacian_into(g: &WeightedGraph, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for e in g.edges() {
        let d = e.omega * (u[e.j] - u[e.i]);
        out[e.i] += d;
        out[e.j] -= d;
    }
}

/// `(m, m2) = 1/2 sum over ordered pairs = sum over unordered edges`.
pub fn edge_inner(g: &WeightedGraph, m: &EdgeField, m2: &EdgeField) -> f64 {
    g.edges().iter().map(|e| m.get(e.i, e.j) * m2.get(e.i, e.j)).sum()
}

/// `(v, v2)_rho = 1/2 sum theta_ij(rho) v^{ij} v2^{ij}`.
pub fn rho_inner(g: &WeightedGraph, rho: &[f64], v: &EdgeField, v2: &EdgeField) -> f64 {
    g.edges()
        .iter()
        .map(|e| theta_unchecked(rho[e.i], rho[e.j]) * v.get(e.i, e.j) * v2.get(e.i, e.j))
        .sum()
}

/// `(div_rho v)^i = sum_j sqrt(w_ij) theta_ij(rho) v^{ji}`.
pub fn rho_div(g: &WeightedGraph, rho: &[f64], v: &EdgeField) -> Result<Vec<f64>> {
    check_len(g, rho.len())?;
    let m = EdgeField::from_edges(g, |_, e| theta_unchecked(rho[e.i], rho[e.j]) * v.get(e.i, e.j));
    Ok(div_unchecked(g, &m))
}

/// Orthogonal projection onto the zero-sum subspace.
pub fn project_tangent(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}
