//! Diagnostics of the structural estimates satisfied by solutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{picard_solve, solve, MfgSolution, SolverOptions};
use crate::calculus::{dot, edge_inner, project_tangent, EdgeField};
use crate::error::{Error, Result};
use crate::grid::Path;
use crate::model::{GameSpec, MfgSystem};
use crate::theta::{theta_jet_unchecked, theta_unchecked};

/// Random interior point with log-spread components.
pub(crate) fn random_interior<R: Rng>(n: usize, spread: f64, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (spread * (rng.random::<f64>() - 0.5)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub(crate) fn random_field<R: Rng>(sys: &dyn MfgSystem, scale: f64, rng: &mut R) -> EdgeField {
    EdgeField::from_edges(sys.graph(), |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Minimum of `(q, D_pp H q) - (eta, D_mumu H eta + D^2 F eta)` over unit `(eta, q)`.
    pub min_gap_hessian: f64,
    /// Minimum of `(D_mu B eta + D_p B q, q) - (D_mu H eta + D_p H q, eta)` over unit `(eta, q)`.
    pub min_gap_differential: f64,
    /// Minimum of `(p1 - p2, B1 - B2) - (mu1 - mu2, H1 - H2)`.
    pub min_gap_integrated: f64,
    /// Minimum of `(g(mu1) - g(mu2), mu1 - mu2)`.
    pub min_gap_terminal: f64,
}

impl MonotonicityReport {
    pub fn passes(&self) -> bool {
        self.min_gap_hessian > 0.0
            && self.min_gap_differential > 0.0
            && self.min_gap_integrated > 0.0
            && self.min_gap_terminal >= 0.0
    }
}

fn unit_pair<R: Rng>(sys: &dyn MfgSystem, rng: &mut R) -> (Vec<f64>, EdgeField) {
    let n = sys.graph().n();
    let eta = project_tangent(&(0..n).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
    let q = random_field(sys, 1.0, rng);
    let norm = (dot(&eta, &eta) + edge_inner(sys.graph(), &q, &q)).sqrt();
    (eta.iter().map(|v| v / norm).collect(), q.scale(1.0 / norm))
}

/// Samples the Lasry-Lions conditions in integrated and differential form, and the
/// Hessian form specific to Hamiltonian-derived systems.
pub fn monotonicity_check(spec: &GameSpec, sys: &dyn MfgSystem, samples: usize, seed: u64) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.graph.n();
    let fam = spec.model.family;
    let mut report = MonotonicityReport {
        samples,
        min_gap_hessian: f64::INFINITY,
        min_gap_differential: f64::INFINITY,
        min_gap_integrated: f64::INFINITY,
        min_gap_terminal: f64::INFINITY,
    };
    for _ in 0..samples {
        let rho = random_interior(n, 6.0, &mut rng);
        let p = random_field(sys, 3.0, &mut rng);
        let (eta, q) = unit_pair(sys, &mut rng);

        let mut lhs = -spec.model.c_f * dot(&eta, &eta);
        let mut rhs = 0.0;
        for e in spec.graph.edges() {
            let jet = theta_jet_unchecked(rho[e.i], rho[e.j]);
            let pij = p.get(e.i, e.j);
            let (a, b) = (eta[e.i], eta[e.j]);
            lhs += (jet.d11 * a * a + 2.0 * jet.d12 * a * b + jet.d22 * b * b) * fam.h(pij);
            rhs += jet.value * fam.h2(pij) * q.get(e.i, e.j).powi(2);
        }
        report.min_gap_hessian = report.min_gap_hessian.min(rhs - lhs);

        let bq = sys.db_mu(&rho, &p, &eta).add(&sys.db_p(&rho, &p, &q));
        let hq: Vec<f64> = sys
            .dh_mu(&rho, &p, &eta)
            .iter()
            .zip(sys.dh_p(&rho, &p, &q))
            .map(|(a, b)| a + b)
            .collect();
        let gap = edge_inner(sys.graph(), &bq, &q) - dot(&hq, &eta);
        report.min_gap_differential = report.min_gap_differential.min(gap);

        let rho2 = random_interior(n, 6.0, &mut rng);
        let p2 = random_field(sys, 3.0, &mut rng);
        let db = sys.b_map(&rho, &p).sub(&sys.b_map(&rho2, &p2));
        let dh: Vec<f64> = sys.h_map(&rho, &p).iter().zip(sys.h_map(&rho2, &p2)).map(|(a, b)| a - b).collect();
        let dmu: Vec<f64> = rho.iter().zip(&rho2).map(|(a, b)| a - b).collect();
        let gap = edge_inner(sys.graph(), &p.sub(&p2), &db) - dot(&dmu, &dh);
        report.min_gap_integrated = report.min_gap_integrated.min(gap);

        let dg: Vec<f64> = sys.g_map(&rho).iter().zip(sys.g_map(&rho2)).map(|(a, b)| a - b).collect();
        report.min_gap_terminal = report.min_gap_terminal.min(dot(&dg, &dmu));
    }
    report
}

/// Empirical version of the coercivity constant: the largest of `-min H_i`,
/// `-min ((B, p) - (H, mu))` over samples and `max |g_i|` over the vertices of the simplex.
pub fn fitted_c1(sys: &dyn MfgSystem, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.graph().n();
    let mut c1 = 0.0_f64;
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        c1 = c1.max(crate::calculus::max_abs(&sys.g_map(&e)));
    }
    for _ in 0..samples {
        let mu = random_interior(n, 6.0, &mut rng);
        let p = random_field(sys, 3.0, &mut rng);
        let h = sys.h_map(&mu, &p);
        let b = sys.b_map(&mu, &p);
        c1 = c1.max(-h.iter().copied().fold(f64::INFINITY, f64::min));
        c1 = c1.max(dot(&h, &mu) - edge_inner(sys.graph(), &b, &p));
    }
    c1
}

/// `lambda (phi(T), rho(T)) - lambda (phi(t), mu) - 2 C1 (T - t)`; nonpositive for solutions.
pub fn lasry_lions_probe(sys: &dyn MfgSystem, sol: &MfgSolution) -> f64 {
    let grid = sol.grid();
    let c1 = sys.structural_c1();
    sol.lambda * (dot(sol.phi.last(), sol.rho.last()) - dot(sol.phi.first(), sol.rho.first()))
        - 2.0 * c1 * (grid.t1 - grid.t0)
}

/// Ratio of `eps sup_s max_i |lambda phi_i(s)|` to `(4 (T - t) + 3) C1`.
pub fn phi_bound_probe(sys: &dyn MfgSystem, sol: &MfgSolution, eps: f64) -> f64 {
    let grid = sol.grid();
    let sup = sol.phi.values.iter().flatten().fold(0.0_f64, |m, v| m.max((sol.lambda * v).abs()));
    eps * sup / ((4.0 * (grid.t1 - grid.t0) + 3.0) * sys.structural_c1())
}

/// Sup over the grid of `[t1, T]` of the density and potential gaps between the solve from
/// `(t, mu)` and the solve restarted from `(t1, rho(t1))`.
pub fn flow_property_check(sys: &dyn MfgSystem, t: f64, t1: f64, mu: &[f64], opts: &SolverOptions) -> Result<f64> {
    if !(t1 >= t && t1 < sys.horizon()) {
        return Err(Error::InvalidArgument(format!("split time {t1} must lie in [{t}, T)")));
    }
    if t1 == t {
        return Ok(0.0);
    }
    let whole = solve(sys, t, mu, opts)?;
    let mid = whole.rho.at(t1);
    let tail = solve(sys, t1, &mid, opts)?;
    let mut gap = 0.0_f64;
    for (k, s) in tail.grid().nodes().into_iter().enumerate() {
        let rho = whole.rho.at(s);
        let phi = whole.phi.at(s);
        let d = crate::calculus::max_abs_diff(&rho, &tail.rho.values[k])
            + crate::calculus::max_abs_diff(&phi, &tail.phi.values[k]);
        gap = gap.max(d);
    }
    Ok(gap)
}

/// Sup-norm distance between two solves started from independent random potential guesses.
pub fn uniqueness_gap(sys: &dyn MfgSystem, t: f64, mu: &[f64], opts: &SolverOptions, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.graph().n();
    let steps = opts.steps.unwrap_or_else(|| super::default_steps(sys, sys.horizon() - t));
    let grid = crate::grid::TimeGrid::new(t, sys.horizon(), steps)?;
    let mut sols = Vec::new();
    for _ in 0..2 {
        let values = (0..=steps)
            .map(|_| (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
            .collect();
        let guess = Path::new(grid, values)?;
        let opts = SolverOptions { steps: Some(steps), ..*opts };
        sols.push(picard_solve(sys, t, mu, 1.0, &opts, Some(&guess)).or_else(|_| solve(sys, t, mu, &opts))?);
    }
    Ok(sols[0].phi.max_abs_diff(&sols[1].phi).max(sols[0].rho.max_abs_diff(&sols[1].rho)))
}

/// Mobility ratio `|D_p H^{ij}| / ((mu^i + mu^j) h_log(mu^j/mu^i) |p^{ij}|)` at one point,
/// identically 1 for the quadratic family.
pub fn mobility_identity_gap(spec: &GameSpec, mu: &[f64], p: &EdgeField) -> f64 {
    let mut worst = 0.0_f64;
    for e in spec.graph.edges() {
        let pij = p.get(e.i, e.j);
        let lhs = (theta_unchecked(mu[e.i], mu[e.j]) * pij).abs();
        let rhs = (mu[e.i] + mu[e.j]) * crate::theta::h_log(mu[e.j] / mu[e.i]) * pij.abs();
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
