//! Uniform time grids, node-valued paths, cubic interpolation and quadrature.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidArgument(format!("empty time interval [{t0}, {t1}]")));
        }
        if steps < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 steps, got {steps}")));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// First node of the 4-point stencil around position `x` (in steps) and the local coordinate.
    fn stencil(&self, x: f64) -> (usize, f64) {
        let n = self.steps;
        let k = (x.floor().max(0.0) as usize).min(n - 1);
        let base = k.saturating_sub(1).min(n - 3);
        (base, x - base as f64)
    }
}

/// Cubic Lagrange weights and their derivatives for nodes `0, 1, 2, 3` at `x`.
pub fn lagrange4(x: f64) -> ([f64; 4], [f64; 4]) {
    let d = [x, x - 1.0, x - 2.0, x - 3.0];
    let denom = [-6.0, 2.0, -2.0, 6.0];
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    for m in 0..4 {
        let mut prod = 1.0;
        let mut dsum = 0.0;
        for a in 0..4 {
            if a == m {
                continue;
            }
            let mut p = 1.0;
            for b in 0..4 {
                if b != m && b != a {
                    p *= d[b];
                }
            }
            dsum += p;
            prod *= d[a];
        }
        w[m] = prod / denom[m];
        dw[m] = dsum / denom[m];
    }
    (w, dw)
}

/// Vector values on the nodes of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
}

impl Path {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.steps + 1 {
            return Err(Error::DimensionMismatch { expected: grid.steps + 1, got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, v: Vec<f64>) -> Self {
        Self { grid, values: vec![v; grid.steps + 1] }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn first(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.values[self.grid.steps]
    }

    fn combine(&self, base: usize, w: &[f64; 4]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (m, wm) in w.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.values[base + m]) {
                *o += wm * v;
            }
        }
        out
    }

    /// Cubic interpolation at time `s`, clamped to the grid.
    pub fn at(&self, s: f64) -> Vec<f64> {
        let x = ((s - self.grid.t0) / self.grid.dt()).clamp(0.0, self.grid.steps as f64);
        let (base, local) = self.grid.stencil(x);
        self.combine(base, &lagrange4(local).0)
    }

    /// Time derivative of the cubic interpolant at time `s`.
    pub fn derivative_at(&self, s: f64) -> Vec<f64> {
        let x = ((s - self.grid.t0) / self.grid.dt()).clamp(0.0, self.grid.steps as f64);
        let (base, local) = self.grid.stencil(x);
        let dw = lagrange4(local).1;
        let h = self.grid.dt();
        self.combine(base, &dw).into_iter().map(|v| v / h).collect()
    }

    /// Interpolated value at the midpoint of step `k`.
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        let (base, local) = self.grid.stencil(k as f64 + 0.5);
        self.combine(base, &lagrange4(local).0)
    }

    /// Componentwise integral over the whole grid.
    pub fn integrate(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|c| {
                let col: Vec<f64> = self.values.iter().map(|v| v[c]).collect();
                integrate_nodes(&col, self.grid.dt())
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Path) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::calculus::max_abs_diff(a, b))
            .fold(0.0, f64::max)
    }
}

/// Integral of equally spaced samples by Simpson's rule (3/8 rule on the last panel when odd).
pub fn integrate_nodes(f: &[f64], h: f64) -> f64 {
    let n = f.len() - 1;
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return 0.5 * h * (f[0] + f[1]);
    }
    if n == 2 {
        return h / 3.0 * (f[0] + 4.0 * f[1] + f[2]);
    }
    let (even_end, tail) = if n % 2 == 0 { (n, 0.0) } else {
        let k = n - 3;
        (k, 3.0 * h / 8.0 * (f[k] + 3.0 * f[k + 1] + 3.0 * f[k + 2] + f[k + 3]))
    };
    let mut s = 0.0;
    let mut k = 0;
    while k < even_end {
        s += f[k] + 4.0 * f[k + 1] + f[k + 2];
        k += 2;
    }
    s * h / 3.0 + tail
}

/// Three-point Gauss-Legendre nodes and weights on `[0, 1]`.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];
