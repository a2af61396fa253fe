//! Action functional, value `U(t, mu)` by the forward-backward characterization and by
//! direct minimization, and HJB certification.

mod direct;
mod lbfgs;

pub use direct::{heat_flow_path, value_by_direct_min, ActionPath, DirectOptions, DirectResult};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{grad_unchecked, project_tangent, EdgeField};
use crate::error::{Error, Result};
use crate::grid::integrate_nodes;
use crate::master::individual_noise;
use crate::model::GameSpec;
use crate::solver::{solve, MfgSolution, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct HjbValue {
    pub t: f64,
    pub mu: Vec<f64>,
    pub value: f64,
    /// `grad_W U(t, mu) = grad phi(t)`.
    pub grad_w: EdgeField,
    /// Forward-backward solution; `None` at `t = T`.
    pub solution: Option<MfgSolution>,
}

/// `U(t, mu)` as the action of the forward-backward minimizer plus the terminal cost.
pub fn value_by_fb(spec: &GameSpec, t: f64, mu: &[f64], opts: &SolverOptions) -> Result<HjbValue> {
    if t == spec.horizon {
        crate::model::check_interior(mu)?;
        return Ok(HjbValue {
            t,
            mu: mu.to_vec(),
            value: spec.terminal_cost(mu),
            grad_w: grad_unchecked(&spec.graph, &spec.dterminal_cost(mu)),
            solution: None,
        });
    }
    let sol = solve(spec, t, mu, opts)?;
    let value = fb_action(spec, &sol) + spec.terminal_cost(sol.rho.last());
    Ok(HjbValue {
        t,
        mu: mu.to_vec(),
        value,
        grad_w: grad_unchecked(&spec.graph, sol.value()),
        solution: Some(sol),
    })
}

/// `int (L(rho, D_p H(rho, -grad phi)) - F(rho)) ds` along a solution, by Simpson's rule.
pub fn fb_action(spec: &GameSpec, sol: &MfgSolution) -> f64 {
    let integrand: Vec<f64> = sol
        .rho
        .values
        .iter()
        .zip(&sol.phi.values)
        .map(|(rho, phi)| {
            let p = grad_unchecked(&spec.graph, phi).scale(-1.0);
            let f = spec.model.family;
            let m = EdgeField::from_edges(&spec.graph, |_, e| {
                crate::theta::theta_unchecked(rho[e.i], rho[e.j]) * f.h1(p.get(e.i, e.j))
            });
            spec.lagrangian_raw(rho, &m) - spec.coupling(rho)
        })
        .collect();
    integrate_nodes(&integrand, sol.grid().dt())
}

/// `(iota_0, iota^T)` with `iota_0 = -max U_T^- - T max|F| - T C_L` and
/// `iota^T = T max|F| + max U_T`, maxima over the simplex.
pub fn iota_bounds(spec: &GameSpec) -> (f64, f64) {
    let t = spec.horizon;
    let max_f = 0.5 * spec.model.c_f;
    let max_ut = 0.5 * spec.model.c_t;
    let c_l = spec.model.family.coercivity(spec.graph.edges().len());
    (-t * max_f - t * c_l, t * max_f + max_ut)
}

fn value_only(spec: &GameSpec, t: f64, mu: &[f64], opts: &SolverOptions) -> Result<f64> {
    Ok(value_by_fb(spec, t, mu, opts)?.value)
}

/// Tangent derivative of `U(t, .)` by central differences along spanning-tree directions.
pub fn dmu_value_fd(spec: &GameSpec, t: f64, mu: &[f64], h: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let g = &spec.graph;
    let n = g.n();
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let tree = g.spanning_tree();
    let mut v = nalgebra::DMatrix::zeros(n, n);
    let mut w = nalgebra::DVector::zeros(n);
    for (c, &(a, b)) in tree.iter().enumerate() {
        let mut plus = mu.to_vec();
        let mut minus = mu.to_vec();
        plus[a] += h * r2;
        plus[b] -= h * r2;
        minus[a] -= h * r2;
        minus[b] += h * r2;
        w[c] = (value_only(spec, t, &plus, opts)? - value_only(spec, t, &minus, opts)?) / (2.0 * h);
        v[(a, c)] = r2;
        v[(b, c)] = -r2;
    }
    for i in 0..n {
        v[(i, n - 1)] = 1.0 / (n as f64).sqrt();
    }
    let d = v
        .transpose()
        .lu()
        .solve(&w)
        .ok_or_else(|| Error::InvalidArgument("spanning-tree directions are degenerate".into()))?;
    Ok(d.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientIdentity {
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

/// Compares `grad_W U(s, rho(s))`, from finite differences of the value, against
/// `grad phi(s)` at `s = t` and at `midpoints` further times along the minimizer.
pub fn gradient_identity_check(
    spec: &GameSpec,
    t: f64,
    mu: &[f64],
    h: f64,
    midpoints: usize,
    opts: &SolverOptions,
) -> Result<GradientIdentity> {
    let base = value_by_fb(spec, t, mu, opts)?;
    let sol = base
        .solution
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("gradient identity needs t < T".into()))?;
    let steps = sol.grid().steps;
    let mut times = Vec::new();
    let mut gaps = Vec::new();
    for j in 0..=midpoints {
        let k = j * steps / (2 * (midpoints + 1)) * 2;
        let s = sol.grid().node(k);
        let rho = &sol.rho.values[k];
        let sub = SolverOptions { steps: opts.steps.map(|n| (n - k).max(3)), ..*opts };
        let d = dmu_value_fd(spec, s, rho, h, &sub)?;
        let gap = grad_unchecked(&spec.graph, &d).sub(&grad_unchecked(&spec.graph, &sol.phi.values[k])).max_abs();
        times.push(s);
        gaps.push(gap);
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(GradientIdentity { times, gaps, max_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbResidual {
    pub t: f64,
    pub residual: f64,
    pub dt_value: f64,
}

/// `-dU/dt + H(mu, -grad_W U) - Lap_ind U + F(mu)` with a central difference in time
/// (one-sided near the endpoints) and `grad_W U = grad phi(t)`.
pub fn hjb_residual(spec: &GameSpec, t: f64, mu: &[f64], h_t: f64, opts: &SolverOptions) -> Result<HjbResidual> {
    let big_t = spec.horizon;
    if !(t >= 0.0 && t < big_t && h_t > 0.0) {
        return Err(Error::InvalidArgument(format!("need 0 <= t < T and h_t > 0, got t = {t}, h_t = {h_t}")));
    }
    let steps = opts.steps.unwrap_or_else(|| crate::solver::default_steps(spec, big_t - t));
    let opts = SolverOptions { steps: Some(steps), ..*opts };
    let base = value_by_fb(spec, t, mu, &opts)?;
    let u = |s: f64| value_only(spec, s, mu, &opts);
    let dt_value = if t + h_t < big_t && t >= h_t {
        (u(t + h_t)? - u(t - h_t)?) / (2.0 * h_t)
    } else if t + h_t >= big_t {
        (3.0 * base.value - 4.0 * u(t - h_t)? + u(t - 2.0 * h_t)?) / (2.0 * h_t)
    } else {
        (-3.0 * base.value + 4.0 * u(t + h_t)? - u(t + 2.0 * h_t)?) / (2.0 * h_t)
    };
    let grad_w = &base.grad_w;
    let ham = spec.hamiltonian(mu, &grad_w.scale(-1.0))?;
    let residual = -dt_value + ham - individual_noise(&spec.graph, mu, grad_w) + spec.coupling(mu);
    Ok(HjbResidual { t, residual, dt_value })
}

pub(crate) fn random_simplex<R: Rng>(n: usize, spread: f64, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (spread * (rng.random::<f64>() - 0.5)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub margins: Vec<f64>,
    pub min_margin: f64,
}

/// Chord margins `s U(mu0) + (1 - s) U(mu1) - U(s mu0 + (1 - s) mu1)` over random chords.
pub fn convexity_probe(spec: &GameSpec, t: f64, samples: usize, seed: u64, opts: &SolverOptions) -> Result<ConvexityReport> {
    use rayon::prelude::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.graph.n();
    let chords: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..samples)
        .map(|_| (random_simplex(n, 2.0, &mut rng), random_simplex(n, 2.0, &mut rng), 0.2 + 0.6 * rng.random::<f64>()))
        .collect();
    let margins = chords
        .par_iter()
        .map(|(a, b, s)| {
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
            Ok(s * value_only(spec, t, a, opts)? + (1.0 - s) * value_only(spec, t, b, opts)?
                - value_only(spec, t, &mid, opts)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport { margins, min_margin })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiconcavityReport {
    pub h: f64,
    /// Max over directions of the second difference divided by `|h d|^2`.
    pub ratio: f64,
    pub ratio_half: f64,
}

/// Second differences `U(mu + h d) + U(mu - h d) - 2 U(mu)` over spanning-tree and random
/// unit tangent directions, at steps `h` and `h/2`.
pub fn semiconcavity_probe(
    spec: &GameSpec,
    t: f64,
    mu: &[f64],
    h: f64,
    random_dirs: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SemiconcavityReport> {
    let n = spec.graph.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = spec
        .graph
        .spanning_tree()
        .into_iter()
        .map(|(a, b)| {
            let mut d = vec![0.0; n];
            d[a] = std::f64::consts::FRAC_1_SQRT_2;
            d[b] = -std::f64::consts::FRAC_1_SQRT_2;
            d
        })
        .collect();
    for _ in 0..random_dirs {
        let d = project_tangent(&(0..n).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.push(d.iter().map(|x| x / norm).collect());
    }
    let center = value_only(spec, t, mu, opts)?;
    let ratio_at = |step: f64| -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for d in &dirs {
            let plus: Vec<f64> = mu.iter().zip(d).map(|(m, x)| m + step * x).collect();
            let minus: Vec<f64> = mu.iter().zip(d).map(|(m, x)| m - step * x).collect();
            let second = value_only(spec, t, &plus, opts)? + value_only(spec, t, &minus, opts)? - 2.0 * center;
            worst = worst.max(second / (step * step));
        }
        Ok(worst)
    };
    Ok(SemiconcavityReport { h, ratio: ratio_at(h)?, ratio_half: ratio_at(0.5 * h)? })
}
