//! Direct minimization of the discretized action over admissible density paths.
//!
//! Paths are parametrized by a total flux `m_k` per step; densities follow from
//! `rho_{k+1} = rho_k - ds div m_k`, so mass is conserved exactly and the drift flux at step
//! `k` is `m_k + grad rho_bar_k` with `rho_bar_k` the step midpoint.

use nalgebra::DMatrix;
use serde::Serialize;

use super::lbfgs::{minimize, LbfgsOptions};
use crate::calculus::{div_unchecked, grad_unchecked, EdgeField};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{check_interior, GameSpec};
use crate::solver::{solve, MfgSolution, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectOptions {
    pub steps: usize,
    pub lbfgs: LbfgsOptions,
    /// Start from the forward-backward minimizer instead of the heat flow.
    pub warm_start: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { steps: 200, lbfgs: LbfgsOptions::default(), warm_start: false }
    }
}

/// Densities at the grid nodes and the total flux on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPath {
    pub grid: TimeGrid,
    pub rho: Vec<Vec<f64>>,
    pub flux: Vec<EdgeField>,
}

impl ActionPath {
    fn midpoint(&self, k: usize) -> Vec<f64> {
        self.rho[k].iter().zip(&self.rho[k + 1]).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// `sum_k ds [L(rho_bar, m_k + grad rho_bar) - F(rho_bar)] + U_T(rho_N)`.
    pub fn action(&self, spec: &GameSpec) -> f64 {
        let ds = self.grid.dt();
        let mut total = spec.terminal_cost(&self.rho[self.grid.steps]);
        for (k, m) in self.flux.iter().enumerate() {
            let rb = self.midpoint(k);
            let drift = m.add(&grad_unchecked(&spec.graph, &rb));
            total += ds * (spec.lagrangian_raw(&rb, &drift) - spec.coupling(&rb));
        }
        total
    }

    /// Sup-norm defect of the discrete continuity equation.
    pub fn continuity_defect(&self, spec: &GameSpec) -> f64 {
        let ds = self.grid.dt();
        let mut worst = 0.0_f64;
        for (k, m) in self.flux.iter().enumerate() {
            let d = div_unchecked(&spec.graph, m);
            for i in 0..d.len() {
                worst = worst.max(((self.rho[k + 1][i] - self.rho[k][i]) / ds + d[i]).abs());
            }
        }
        worst
    }

    /// Largest ratio `|rho(s2) - rho(s1)| / (|s2 - s1|^(1/q') |rho'|_{L^q})` over node pairs,
    /// with `q'` conjugate to `q`; at most 1 by Hölder's inequality.
    pub fn holder_ratio(&self, q: f64) -> f64 {
        let ds = self.grid.dt();
        let speed: f64 = (0..self.grid.steps)
            .map(|k| {
                let v: f64 = self.rho[k + 1].iter().zip(&self.rho[k]).map(|(a, b)| ((a - b) / ds).powi(2)).sum();
                ds * v.sqrt().powf(q)
            })
            .sum::<f64>()
            .powf(1.0 / q);
        if speed == 0.0 {
            return 0.0;
        }
        let qc = q / (q - 1.0);
        let mut worst = 0.0_f64;
        for a in 0..=self.grid.steps {
            for b in a + 1..=self.grid.steps {
                let d: f64 = self.rho[b].iter().zip(&self.rho[a]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let bound = ((b - a) as f64 * ds).powf(1.0 / qc) * speed;
                worst = worst.max(d / bound);
            }
        }
        worst
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

fn laplacian_matrix(spec: &GameSpec) -> DMatrix<f64> {
    let n = spec.graph.n();
    let mut l = DMatrix::zeros(n, n);
    for e in spec.graph.edges() {
        l[(e.i, e.j)] += e.omega;
        l[(e.j, e.i)] += e.omega;
        l[(e.i, e.i)] -= e.omega;
        l[(e.j, e.j)] -= e.omega;
    }
    l
}

/// Crank-Nicolson heat flow from `mu` on `[t, T]`, carried by the flux `-grad rho_bar`
/// (zero drift).
pub fn heat_flow_path(spec: &GameSpec, t: f64, mu: &[f64], steps: usize) -> Result<ActionPath> {
    check_interior(mu)?;
    let grid = TimeGrid::new(t, spec.horizon, steps)?;
    let ds = grid.dt();
    let n = mu.len();
    let l = laplacian_matrix(spec);
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = (&id - &l * (0.5 * ds)).lu();
    let rhs = &id + &l * (0.5 * ds);
    let mut rho = vec![mu.to_vec()];
    let mut flux = Vec::with_capacity(steps);
    for k in 0..steps {
        let cur = nalgebra::DVector::from_column_slice(&rho[k]);
        let next = lhs
            .solve(&(&rhs * cur))
            .ok_or_else(|| Error::InvalidArgument("Crank-Nicolson system is singular".into()))?;
        let next: Vec<f64> = next.iter().copied().collect();
        let rb: Vec<f64> = rho[k].iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
        flux.push(grad_unchecked(&spec.graph, &rb).scale(-1.0));
        rho.push(next);
    }
    Ok(ActionPath { grid, rho, flux })
}

fn warm_path(spec: &GameSpec, t: f64, mu: &[f64], steps: usize, sol: &MfgSolution) -> Result<ActionPath> {
    let grid = TimeGrid::new(t, spec.horizon, steps)?;
    let ds = grid.dt();
    let f = spec.model.family;
    let mut rho = vec![mu.to_vec()];
    let mut flux = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = grid.node(k) + 0.5 * ds;
        let rb = sol.rho.at(s);
        let p = grad_unchecked(&spec.graph, &sol.phi.at(s));
        let drift = EdgeField::from_edges(&spec.graph, |_, e| {
            -crate::theta::theta_unchecked(rb[e.i], rb[e.j]) * f.h1(p.get(e.i, e.j))
        });
        let m = drift.sub(&grad_unchecked(&spec.graph, &rb));
        let d = div_unchecked(&spec.graph, &m);
        let next: Vec<f64> = rho[k].iter().zip(&d).map(|(r, v)| r - ds * v).collect();
        flux.push(m);
        rho.push(next);
    }
    Ok(ActionPath { grid, rho, flux })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectResult {
    pub value: f64,
    pub path: ActionPath,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub min_density: f64,
}

struct Problem<'a> {
    spec: &'a GameSpec,
    mu: &'a [f64],
    grid: TimeGrid,
    n_edges: usize,
}

impl Problem<'_> {
    fn unpack(&self, x: &[f64]) -> Option<ActionPath> {
        let ds = self.grid.dt();
        let g = &self.spec.graph;
        let mut rho = Vec::with_capacity(self.grid.steps + 1);
        rho.push(self.mu.to_vec());
        let mut flux = Vec::with_capacity(self.grid.steps);
        for k in 0..self.grid.steps {
            let m = EdgeField::from_edge_values(g, &x[k * self.n_edges..(k + 1) * self.n_edges]);
            let d = div_unchecked(g, &m);
            let next: Vec<f64> = rho[k].iter().zip(&d).map(|(r, v): (&f64, &f64)| r - ds * v).collect();
            if next.iter().any(|v| !(*v > 0.0)) {
                return None;
            }
            flux.push(m);
            rho.push(next);
        }
        Some(ActionPath { grid: self.grid, rho, flux })
    }

    /// Action and its gradient with respect to the step fluxes, by the discrete adjoint.
    fn evaluate(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let path = self.unpack(x)?;
        let spec = self.spec;
        let g = &spec.graph;
        let ds = self.grid.dt();
        let steps = self.grid.steps;
        let mut value = spec.terminal_cost(&path.rho[steps]);
        let mut sens = Vec::with_capacity(steps);
        let mut momenta = Vec::with_capacity(steps);
        for k in 0..steps {
            let rb = path.midpoint(k);
            let drift = path.flux[k].add(&grad_unchecked(g, &rb));
            let l = spec.lagrangian_raw(&rb, &drift);
            if !l.is_finite() {
                return None;
            }
            value += ds * (l - spec.coupling(&rb));
            let p = spec.dm_lagrangian_raw(&rb, &drift);
            let mut gk = spec.dmu_lagrangian_raw(&rb, &drift);
            for ((o, d), v) in gk.iter_mut().zip(spec.dcoupling(&rb)).zip(div_unchecked(g, &p)) {
                *o -= d + v;
            }
            sens.push(gk);
            momenta.push(p);
        }
        let mut lambda: Vec<f64> = spec
            .dterminal_cost(&path.rho[steps])
            .iter()
            .zip(&sens[steps - 1])
            .map(|(a, b)| a + 0.5 * ds * b)
            .collect();
        let mut grad = vec![0.0; x.len()];
        for k in (0..steps).rev() {
            let gl = grad_unchecked(g, &lambda);
            for (j, e) in g.edges().iter().enumerate() {
                grad[k * self.n_edges + j] = ds * (momenta[k].get(e.i, e.j) + gl.get(e.i, e.j));
            }
            if k > 0 {
                for i in 0..lambda.len() {
                    lambda[i] += 0.5 * ds * (sens[k][i] + sens[k - 1][i]);
                }
            }
        }
        Some((value, grad))
    }
}

/// `U(t, mu)` as the minimum of the discretized action, by L-BFGS over the step fluxes.
pub fn value_by_direct_min(spec: &GameSpec, t: f64, mu: &[f64], opts: &DirectOptions) -> Result<DirectResult> {
    check_interior(mu)?;
    if !(t < spec.horizon) {
        return Err(Error::InvalidArgument(format!("direct minimization needs t < T, got t = {t}")));
    }
    let start = if opts.warm_start {
        let sol = solve(spec, t, mu, &SolverOptions::default().with_tol(1e-11))?;
        warm_path(spec, t, mu, opts.steps, &sol)?
    } else {
        heat_flow_path(spec, t, mu, opts.steps)?
    };
    let n_edges = spec.graph.edges().len();
    let problem = Problem { spec, mu, grid: start.grid, n_edges };
    let x0: Vec<f64> = start.flux.iter().flat_map(|m| m.edge_values(&spec.graph)).collect();
    let x0 = if problem.evaluate(&x0).is_some() {
        x0
    } else {
        heat_flow_path(spec, t, mu, opts.steps)?.flux.iter().flat_map(|m| m.edge_values(&spec.graph)).collect()
    };
    let out = minimize(|x| problem.evaluate(x), x0, &opts.lbfgs)
        .ok_or_else(|| Error::InvalidArgument("initial path leaves the simplex".into()))?;
    if out.stalled && out.grad_norm > 1e-6 {
        return Err(Error::LineSearchStall { iteration: out.iterations, objective: out.f });
    }
    let path = problem.unpack(&out.x).expect("accepted iterates are feasible");
    let min_density = path.min_density();
    Ok(DirectResult {
        value: out.f,
        path,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        converged: out.converged || out.stalled,
        min_density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::model::{Family, ModelSpec};

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        for family in [Family::Quadratic, Family::Power { p0: 3.0 }] {
            let graph = WeightedGraph::new(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (0, 3, 1.5)]).unwrap();
            let spec = GameSpec::new(graph, ModelSpec { family, c_f: 1.3, c_t: 0.7 }, 1.0).unwrap();
            let mu = [0.4, 0.3, 0.2, 0.1];
            let start = heat_flow_path(&spec, 0.0, &mu, 12).unwrap();
            let problem = Problem { spec: &spec, mu: &mu, grid: start.grid, n_edges: 4 };
            // Perturb away from the heat flow so the kinetic term is active.
            let x: Vec<f64> = start
                .flux
                .iter()
                .flat_map(|m| m.edge_values(&spec.graph))
                .enumerate()
                .map(|(k, v)| v + 0.05 * ((k as f64) * 0.9).sin())
                .collect();
            let (_, grad) = problem.evaluate(&x).unwrap();
            let h = 1e-6;
            for k in 0..x.len() {
                let mut a = x.clone();
                let mut b = x.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (problem.evaluate(&a).unwrap().0 - problem.evaluate(&b).unwrap().0) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{family:?} coordinate {k}: {fd} vs {}", grad[k]);
            }
        }
    }
}
