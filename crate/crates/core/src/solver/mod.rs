//! Forward-backward solver for
//! `phi' = H(rho, lambda grad phi) - Lap phi`, `rho' = div B(rho, lambda grad phi) + Lap rho`,
//! `phi(T) = g(rho(T))`, `rho(t) = mu`.

mod linear;
mod probes;

pub use linear::{
    dmu_value_fd, dmu_value_shooting, linearized_solve, LinearizedSolution, ShootingMatrix, MAX_CONDITION,
};
pub use probes::{
    fitted_c1, flow_property_check, lasry_lions_probe, mobility_identity_gap, monotonicity_check,
    phi_bound_probe, uniqueness_gap, MonotonicityReport,
};

use serde::Serialize;

use crate::calculus::{div_unchecked, grad_unchecked, laplacian_into, max_abs, EdgeField};
use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::model::{check_interior, MfgSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Number of time steps; chosen from the horizon and graph stiffness when `None`.
    pub steps: Option<usize>,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub homotopy_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { steps: None, damping: 0.5, tol: 1e-9, max_iter: 2000, homotopy_steps: 5 }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }
}

/// Default step count: at least 200 and enough that `dt * lambda_bound <= 2`,
/// where `lambda_bound = 2 * max weighted degree` bounds the Laplacian spectrum.
pub fn default_steps(sys: &dyn MfgSystem, span: f64) -> usize {
    let bound = 2.0 * sys.graph().max_weighted_degree();
    200usize.max((span * bound / 2.0).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// Sup over step midpoints of the potential equation defect.
    pub phi_ode: f64,
    /// Sup over step midpoints of the density equation defect.
    pub rho_ode: f64,
    pub terminal: f64,
    pub initial: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.phi_ode.max(self.rho_ode).max(self.terminal).max(self.initial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgSolution {
    pub phi: Path,
    pub rho: Path,
    pub lambda: f64,
    pub iterations: usize,
    pub gap: f64,
    pub damping: f64,
}

impl MfgSolution {
    pub fn grid(&self) -> TimeGrid {
        self.phi.grid
    }

    /// Value `u(t, mu) = phi(t)`.
    pub fn value(&self) -> &[f64] {
        self.phi.first()
    }

    pub fn min_density(&self) -> f64 {
        self.rho.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

fn grad_scaled(sys: &dyn MfgSystem, phi: &[f64], lambda: f64) -> EdgeField {
    grad_unchecked(sys.graph(), phi).scale(lambda)
}

fn density_rhs(sys: &dyn MfgSystem, rho: &[f64], p: &EdgeField) -> Vec<f64> {
    let g = sys.graph();
    let mut out = div_unchecked(g, &sys.b_map(rho, p));
    let mut lap = vec![0.0; rho.len()];
    laplacian_into(g, rho, &mut lap);
    out.iter_mut().zip(lap).for_each(|(o, l)| *o += l);
    out
}

fn potential_rhs(sys: &dyn MfgSystem, rho: &[f64], phi: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = sys.h_map(rho, &grad_scaled(sys, phi, lambda));
    let mut lap = vec![0.0; phi.len()];
    laplacian_into(sys.graph(), phi, &mut lap);
    out.iter_mut().zip(lap).for_each(|(o, l)| *o -= l);
    out
}

fn lin(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| xi + a * yi).collect()
}

fn positive(v: &[f64]) -> bool {
    v.iter().all(|x| *x > 0.0 && x.is_finite())
}

/// Density pass for a given potential path (RK4, potential interpolated at half steps).
pub fn forward_pass(sys: &dyn MfgSystem, mu: &[f64], phi: &Path, lambda: f64) -> Result<Path> {
    let grid = phi.grid;
    let h = grid.dt();
    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(mu.to_vec());
    let mut p_next = grad_scaled(sys, &phi.values[0], lambda);
    for k in 0..grid.steps {
        let p0 = p_next;
        let pm = grad_scaled(sys, &phi.midpoint(k), lambda);
        p_next = grad_scaled(sys, &phi.values[k + 1], lambda);
        let y = &values[k];
        let k1 = density_rhs(sys, y, &p0);
        let y2 = lin(y, 0.5 * h, &k1);
        let y3;
        let y4;
        let k2;
        let k3;
        if positive(&y2) {
            k2 = density_rhs(sys, &y2, &pm);
            y3 = lin(y, 0.5 * h, &k2);
        } else {
            return Err(Error::NonPositiveDensity { t: grid.node(k), halvings: 0 });
        }
        if positive(&y3) {
            k3 = density_rhs(sys, &y3, &pm);
            y4 = lin(y, h, &k3);
        } else {
            return Err(Error::NonPositiveDensity { t: grid.node(k), halvings: 0 });
        }
        if !positive(&y4) {
            return Err(Error::NonPositiveDensity { t: grid.node(k), halvings: 0 });
        }
        let k4 = density_rhs(sys, &y4, &p_next);
        let next: Vec<f64> =
            (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
        if !positive(&next) {
            return Err(Error::NonPositiveDensity { t: grid.node(k + 1), halvings: 0 });
        }
        values.push(next);
    }
    Path::new(grid, values)
}

/// Potential pass for a given density path, integrated backward from `phi(T) = g(rho(T))`.
/// The Hamiltonian is evaluated at the potential being computed.
pub fn backward_pass(sys: &dyn MfgSystem, rho: &Path, lambda: f64) -> Path {
    let grid = rho.grid;
    let n = grid.steps;
    let h = -grid.dt();
    let mut values = vec![Vec::new(); n + 1];
    values[n] = sys.g_map(rho.last());
    for k in (0..n).rev() {
        let rm = rho.midpoint(k);
        let y = &values[k + 1];
        let k1 = potential_rhs(sys, &rho.values[k + 1], y, lambda);
        let k2 = potential_rhs(sys, &rm, &lin(y, 0.5 * h, &k1), lambda);
        let k3 = potential_rhs(sys, &rm, &lin(y, 0.5 * h, &k2), lambda);
        let k4 = potential_rhs(sys, &rho.values[k], &lin(y, h, &k3), lambda);
        values[k] = (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    }
    Path { grid, values }
}

/// Damped Picard iteration `phi <- d T(phi) + (1 - d) phi`.
pub fn picard_solve(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    lambda: f64,
    opts: &SolverOptions,
    initial: Option<&Path>,
) -> Result<MfgSolution> {
    let n = sys.graph().n();
    if mu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mu.len() });
    }
    check_interior(mu)?;
    if (mu.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidSimplex(format!("components sum to {}", mu.iter().sum::<f64>())));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    let big_t = sys.horizon();
    if !(t < big_t) {
        return Err(Error::InvalidArgument(format!("initial time {t} must precede the horizon {big_t}")));
    }
    let steps = opts.steps.unwrap_or_else(|| default_steps(sys, big_t - t));
    let grid = TimeGrid::new(t, big_t, steps)?;
    let mut phi = match initial {
        Some(p) if p.grid.steps == steps && p.dim() == n => Path { grid, values: p.values.clone() },
        Some(p) => Path { grid, values: grid.nodes().iter().map(|s| p.at(*s)).collect() },
        None => Path::constant(grid, sys.g_map(mu)),
    };
    let mut damping = opts.damping;
    let mut history: Vec<f64> = Vec::new();
    let mut rho;
    for it in 1..=opts.max_iter {
        rho = forward_pass(sys, mu, &phi, lambda)?;
        let image = backward_pass(sys, &rho, lambda);
        let gap = image.max_abs_diff(&phi);
        let scale = 1.0 + phi.values.iter().map(|v| max_abs(v)).fold(0.0, f64::max);
        let floor = 8.0 * f64::EPSILON * scale;
        if gap <= opts.tol.max(floor) {
            let rho = forward_pass(sys, mu, &image, lambda)?;
            return Ok(MfgSolution { phi: image, rho, lambda, iterations: it, gap, damping });
        }
        let k = history.len();
        if k >= 2 && gap > history[k - 1] && history[k - 1] > history[k - 2] {
            damping *= 0.5;
            history.clear();
        }
        history.push(gap);
        for (v, w) in phi.values.iter_mut().zip(&image.values) {
            for (a, b) in v.iter_mut().zip(w) {
                *a += damping * (b - *a);
            }
        }
        if !gap.is_finite() {
            return Err(Error::NoConvergence { iterations: it, gap });
        }
    }
    let rho = forward_pass(sys, mu, &phi, lambda)?;
    let gap = backward_pass(sys, &rho, lambda).max_abs_diff(&phi);
    Err(Error::NoConvergence { iterations: opts.max_iter, gap })
}

/// Continuation in `lambda` over a uniform grid of `steps` values ending at 1.
pub fn homotopy_solve(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    steps: usize,
    opts: &SolverOptions,
) -> Result<(MfgSolution, Vec<usize>)> {
    if steps == 0 {
        return Err(Error::InvalidArgument("homotopy needs at least one step".into()));
    }
    let mut prev: Option<MfgSolution> = None;
    let mut iterations = Vec::with_capacity(steps);
    for k in 1..=steps {
        let lambda = k as f64 / steps as f64;
        let sol = picard_solve(sys, t, mu, lambda, opts, prev.as_ref().map(|s| &s.phi))
            .map_err(|e| Error::HomotopyFailed { lambda, source: Box::new(e) })?;
        iterations.push(sol.iterations);
        prev = Some(sol);
    }
    Ok((prev.expect("at least one homotopy step"), iterations))
}

/// Solves at `lambda = 1`, falling back to continuation when plain iteration fails.
pub fn solve(sys: &dyn MfgSystem, t: f64, mu: &[f64], opts: &SolverOptions) -> Result<MfgSolution> {
    match picard_solve(sys, t, mu, 1.0, opts, None) {
        Ok(sol) => Ok(sol),
        Err(Error::NoConvergence { .. }) | Err(Error::NonPositiveDensity { .. }) => {
            let reduced = SolverOptions { damping: opts.damping * 0.5, ..*opts };
            homotopy_solve(sys, t, mu, opts.homotopy_steps, &reduced).map(|(s, _)| s)
        }
        Err(e) => Err(e),
    }
}

/// Defects of both equations at step midpoints, using a 4-point reconstruction of the
/// time derivative, plus the boundary mismatches.
pub fn residuals(sys: &dyn MfgSystem, sol: &MfgSolution, mu: &[f64]) -> Residuals {
    let grid = sol.grid();
    let mut phi_ode = 0.0_f64;
    let mut rho_ode = 0.0_f64;
    for k in 0..grid.steps {
        let s = grid.node(k) + 0.5 * grid.dt();
        let phi = sol.phi.midpoint(k);
        let rho = sol.rho.midpoint(k);
        let dphi = sol.phi.derivative_at(s);
        let drho = sol.rho.derivative_at(s);
        let fphi = potential_rhs(sys, &rho, &phi, sol.lambda);
        let frho = density_rhs(sys, &rho, &grad_scaled(sys, &phi, sol.lambda));
        for i in 0..phi.len() {
            phi_ode = phi_ode.max((dphi[i] - fphi[i]).abs());
            rho_ode = rho_ode.max((drho[i] - frho[i]).abs());
        }
    }
    let terminal = crate::calculus::max_abs_diff(sol.phi.last(), &sys.g_map(sol.rho.last()));
    let initial = crate::calculus::max_abs_diff(sol.rho.first(), mu);
    Residuals { phi_ode, rho_ode, terminal, initial }
}
