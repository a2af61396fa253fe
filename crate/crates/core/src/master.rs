//! Value function `u(t, mu) = phi(t)` of the forward-backward system, its simplex
//! derivatives and the master-equation residual.

use serde::Serialize;

use crate::calculus::{
    div_unchecked, dot, edge_inner, grad_unchecked, laplacian_unchecked, max_abs_diff, rho_inner, EdgeField,
};
use crate::error::{Error, Result};
use crate::model::MfgSystem;
use crate::solver::{dmu_value_fd, dmu_value_shooting, solve, MfgSolution, SolverOptions};
use crate::graph::WeightedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMethod {
    Shooting,
    Fd,
}

/// `u(t, mu)`, with `u(T, mu) = g(mu)`.
pub fn value(sys: &dyn MfgSystem, t: f64, mu: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    if t == sys.horizon() {
        crate::model::check_interior(mu)?;
        return Ok(sys.g_map(mu));
    }
    Ok(solve(sys, t, mu, opts)?.value().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueSample {
    pub t: f64,
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
    /// Row `i` is the tangent derivative of `u^i`; every row sums to zero.
    pub dmu_u: Vec<Vec<f64>>,
    pub method: DerivativeMethod,
}

/// Tangent derivative of `u` at `(t, mu)`; `h_mu` is the finite-difference step.
pub fn dmu_value(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    method: DerivativeMethod,
    h_mu: f64,
    opts: &SolverOptions,
) -> Result<ValueSample> {
    let n = sys.graph().n();
    if t == sys.horizon() {
        let u = value(sys, t, mu, opts)?;
        let mut d = vec![vec![0.0; n]; n];
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let col = sys.dg(mu, &crate::calculus::project_tangent(&e));
            for i in 0..n {
                d[i][k] = col[i];
            }
        }
        return Ok(ValueSample { t, mu: mu.to_vec(), u, dmu_u: d, method });
    }
    let base = solve(sys, t, mu, opts)?;
    let dmu_u = match method {
        DerivativeMethod::Shooting => dmu_value_shooting(sys, &base)?.0,
        DerivativeMethod::Fd => dmu_value_fd(sys, t, mu, h_mu, opts, Some(&base))?.0,
    };
    Ok(ValueSample { t, mu: mu.to_vec(), u: base.value().to_vec(), dmu_u, method })
}

/// `grad_W V = grad(delta_mu V)`.
pub fn wasserstein_grad(g: &WeightedGraph, dmu_row: &[f64]) -> EdgeField {
    grad_unchecked(g, dmu_row)
}

/// `Lap_ind V = (div grad_W V, mu)`.
pub fn individual_noise(g: &WeightedGraph, mu: &[f64], grad_w: &EdgeField) -> f64 {
    dot(&div_unchecked(g, grad_w), mu)
}

/// The three equivalent forms `(div grad_W V, mu)`, `-(grad_W V, grad mu)` and
/// `-(grad_W V, grad log mu)_mu`.
pub fn individual_noise_forms(g: &WeightedGraph, mu: &[f64], grad_w: &EdgeField) -> [f64; 3] {
    let logmu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    [
        individual_noise(g, mu, grad_w),
        -edge_inner(g, grad_w, &grad_unchecked(g, mu)),
        -rho_inner(g, mu, grad_w, &grad_unchecked(g, &logmu)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScheme {
    Central,
    Backward,
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterResidual {
    pub t: f64,
    pub mu: Vec<f64>,
    pub residual: Vec<f64>,
    pub norm: f64,
    pub scheme: TimeScheme,
    pub shooting_cond: f64,
}

/// Master-equation residual
/// `du/dt - (grad_W u^i, B(mu, grad u)) + Lap_ind u^i - H^i(mu, grad u) + Lap u^i`.
///
/// `du/dt` is a second-order difference of re-solves at shifted initial times, each on the
/// same number of steps; the spatial terms use the shooting derivative.
pub fn master_residual(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    h_t: f64,
    opts: &SolverOptions,
) -> Result<MasterResidual> {
    let big_t = sys.horizon();
    if !(t >= 0.0 && t < big_t) {
        return Err(Error::InvalidArgument(format!("t = {t} must lie in [0, T)")));
    }
    if !(h_t > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {h_t}")));
    }
    let g = sys.graph();
    let steps = opts.steps.unwrap_or_else(|| crate::solver::default_steps(sys, big_t - t));
    let opts = SolverOptions { steps: Some(steps), ..*opts };
    let base = solve(sys, t, mu, &opts)?;
    let u_at = |s: f64| value(sys, s, mu, &opts);
    let u0 = base.value().to_vec();
    let (dudt, scheme) = if t + h_t < big_t && t - h_t >= 0.0 {
        let (a, b) = (u_at(t + h_t)?, u_at(t - h_t)?);
        (a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h_t)).collect::<Vec<_>>(), TimeScheme::Central)
    } else if t + h_t >= big_t {
        let (a, b) = (u_at(t - h_t)?, u_at(t - 2.0 * h_t)?);
        (
            (0..u0.len()).map(|i| (3.0 * u0[i] - 4.0 * a[i] + b[i]) / (2.0 * h_t)).collect(),
            TimeScheme::Backward,
        )
    } else {
        let (a, b) = (u_at(t + h_t)?, u_at(t + 2.0 * h_t)?);
        (
            (0..u0.len()).map(|i| (-3.0 * u0[i] + 4.0 * a[i] - b[i]) / (2.0 * h_t)).collect(),
            TimeScheme::Forward,
        )
    };
    let (dmu, cond) = dmu_value_shooting(sys, &base)?;
    let p = grad_unchecked(g, &u0);
    let b = sys.b_map(mu, &p);
    let h = sys.h_map(mu, &p);
    let lap = laplacian_unchecked(g, &u0);
    let residual: Vec<f64> = (0..u0.len())
        .map(|i| {
            let gw = wasserstein_grad(g, &dmu[i]);
            dudt[i] - edge_inner(g, &gw, &b) + individual_noise(g, mu, &gw) - h[i] + lap[i]
        })
        .collect();
    let norm = crate::calculus::max_abs(&residual);
    Ok(MasterResidual { t, mu: mu.to_vec(), residual, norm, scheme, shooting_cond: cond })
}

/// `max_s |u(s, rho(s)) - phi(s)|` over `samples` evenly spaced grid nodes of the solution
/// from `(t, mu)`; the last node compares against `g(rho(T))`.
pub fn trajectory_consistency(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    samples: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let base: MfgSolution = solve(sys, t, mu, opts)?;
    let steps = base.grid().steps;
    let samples = samples.clamp(1, steps);
    let mut worst = 0.0_f64;
    for j in 0..=samples {
        let k = j * steps / samples;
        let s = base.grid().node(k);
        let rho = &base.rho.values[k];
        let u = if k == steps {
            sys.g_map(rho)
        } else {
            let sub = SolverOptions { steps: opts.steps.map(|n| (n - k).max(3)), ..*opts };
            value(sys, s, rho, &sub)?
        };
        worst = worst.max(max_abs_diff(&u, &base.phi.values[k]));
    }
    Ok(worst)
}
