//! Continuity equation `rho' = div A(s, rho) + Lap rho` with positivity-preserving RK4,
//! and empirical interiority diagnostics.

use rand::Rng;
use serde::Serialize;

use crate::calculus::{div_unchecked, laplacian_unchecked, EdgeField, SimplexPoint};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::grid::{Path, TimeGrid};
use crate::theta::{h_log, theta_unchecked};

/// Componentwise floor below which an RK4 step is rejected.
pub const STEP_FLOOR: f64 = 1e-14;
pub const MAX_HALVINGS: u32 = 40;

/// A flux field `A(s, mu)` together with its dominating function `h`.
pub trait Flux: Sync {
    fn flux(&self, s: f64, mu: &[f64]) -> EdgeField;
    /// `h(u)` with `|A_ij| <= (mu^i + mu^j) h(mu^j / mu^i)`.
    fn dominating(&self, u: f64) -> f64;
}

pub struct ZeroFlux;

impl Flux for ZeroFlux {
    fn flux(&self, _s: f64, mu: &[f64]) -> EdgeField {
        EdgeField::zeros(mu.len())
    }

    fn dominating(&self, _u: f64) -> f64 {
        0.0
    }
}

/// `A = magnitude * theta(mu^i, mu^j) * sigma_ij` with `sigma_ij = sign(d(j) - d(i))`,
/// where `d` is the hop distance to the drained vertex. Saturates the domination bound
/// with `h = magnitude * h_log`.
pub struct AdversarialFlux {
    pub graph: WeightedGraph,
    pub magnitude: f64,
    pub sigma: EdgeField,
}

impl AdversarialFlux {
    pub fn new(graph: WeightedGraph, drained: usize, magnitude: f64) -> Result<Self> {
        if drained >= graph.n() {
            return Err(Error::InvalidArgument(format!("vertex {} out of range", drained + 1)));
        }
        let d: Vec<f64> = graph
            .distances_from(drained)
            .into_iter()
            .map(|x| x.unwrap_or(0) as f64)
            .collect();
        let sigma = EdgeField::from_edges(&graph, |_, e| (d[e.j] - d[e.i]).signum());
        Ok(Self { graph, magnitude, sigma })
    }
}

impl Flux for AdversarialFlux {
    fn flux(&self, _s: f64, mu: &[f64]) -> EdgeField {
        EdgeField::from_edges(&self.graph, |_, e| {
            self.magnitude * theta_unchecked(mu[e.i], mu[e.j]) * self.sigma.get(e.i, e.j)
        })
    }

    fn dominating(&self, u: f64) -> f64 {
        self.magnitude * h_log(u)
    }
}

/// Quadratic-model flux `A = theta * p(s)` for a prescribed momentum path bounded by `bound`.
pub struct MomentumFlux<P: Fn(f64) -> EdgeField + Sync> {
    pub graph: WeightedGraph,
    pub momentum: P,
    pub bound: f64,
}

impl<P: Fn(f64) -> EdgeField + Sync> Flux for MomentumFlux<P> {
    fn flux(&self, s: f64, mu: &[f64]) -> EdgeField {
        let p = (self.momentum)(s);
        EdgeField::from_edges(&self.graph, |_, e| theta_unchecked(mu[e.i], mu[e.j]) * p.get(e.i, e.j))
    }

    fn dominating(&self, u: f64) -> f64 {
        self.bound * h_log(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    pub path: Path,
    /// Total number of step halvings performed.
    pub halvings: u32,
    /// Smallest accepted sub-step.
    pub min_step: f64,
}

fn rhs(g: &WeightedGraph, flux: &dyn Flux, s: f64, rho: &[f64]) -> Vec<f64> {
    let mut out = div_unchecked(g, &flux.flux(s, rho));
    for (o, l) in out.iter_mut().zip(laplacian_unchecked(g, rho)) {
        *o += l;
    }
    out
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| xi + a * yi).collect()
}

fn above_floor(v: &[f64]) -> bool {
    v.iter().all(|x| *x >= STEP_FLOOR && x.is_finite())
}

/// One RK4 step; `None` if any stage leaves the admissible region.
fn rk4_step(g: &WeightedGraph, flux: &dyn Flux, s: f64, rho: &[f64], h: f64) -> Option<Vec<f64>> {
    let k1 = rhs(g, flux, s, rho);
    let y2 = axpy(rho, 0.5 * h, &k1);
    if !above_floor(&y2) {
        return None;
    }
    let k2 = rhs(g, flux, s + 0.5 * h, &y2);
    let y3 = axpy(rho, 0.5 * h, &k2);
    if !above_floor(&y3) {
        return None;
    }
    let k3 = rhs(g, flux, s + 0.5 * h, &y3);
    let y4 = axpy(rho, h, &k3);
    if !above_floor(&y4) {
        return None;
    }
    let k4 = rhs(g, flux, s + h, &y4);
    let next: Vec<f64> = (0..rho.len())
        .map(|i| rho[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    above_floor(&next).then_some(next)
}

/// Integrates the continuity equation on `[t0, t1]`, reporting values on a uniform grid of step `dt`
/// (default `(t1 - t0)/2000`).
pub fn integrate_continuity(
    g: &WeightedGraph,
    flux: &dyn Flux,
    mu0: &SimplexPoint,
    t_span: (f64, f64),
    dt: Option<f64>,
) -> Result<DensityTrajectory> {
    let (t0, t1) = t_span;
    if mu0.as_slice().len() != g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), got: mu0.as_slice().len() });
    }
    let span = t1 - t0;
    let dt = dt.unwrap_or(span / 2000.0);
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let steps = ((span / dt).round() as usize).max(3);
    let grid = TimeGrid::new(t0, t1, steps)?;
    let h = grid.dt();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(mu0.as_slice().to_vec());
    let mut halvings = 0u32;
    let mut min_step = h;
    for k in 0..steps {
        let mut s = grid.node(k);
        let end = grid.node(k + 1);
        let mut rho = values[k].clone();
        let mut sub = h;
        let mut local = 0u32;
        while s < end - 1e-15 * span.abs().max(1.0) {
            let step = sub.min(end - s);
            match rk4_step(g, flux, s, &rho, step) {
                Some(next) => {
                    rho = next;
                    s += step;
                    min_step = min_step.min(step);
                }
                None => {
                    local += 1;
                    halvings += 1;
                    if local > MAX_HALVINGS {
                        return Err(Error::NonPositiveDensity { t: s, halvings: local - 1 });
                    }
                    sub *= 0.5;
                }
            }
        }
        values.push(rho);
    }
    Ok(DensityTrajectory { path: Path::new(grid, values)?, halvings, min_step })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorityReport {
    pub min_profile: Vec<f64>,
    pub fitted_c: f64,
    pub fitted_r: f64,
    pub bound_holds: bool,
}

/// Fits the tightest envelope `min_i rho_i(s) >= c eps exp(-r (s - t0))` with `c <= 1`.
pub fn interiority_report(traj: &DensityTrajectory, eps: f64) -> InteriorityReport {
    let grid = traj.path.grid;
    let min_profile: Vec<f64> = traj
        .path
        .values
        .iter()
        .map(|v| v.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mut r = 0.0_f64;
    for (k, m) in min_profile.iter().enumerate().skip(1) {
        let s = grid.node(k) - grid.t0;
        r = r.max((-(m / eps).ln() / s).max(0.0));
    }
    let c = min_profile
        .iter()
        .enumerate()
        .map(|(k, m)| m / (eps * (-r * (grid.node(k) - grid.t0)).exp()))
        .fold(1.0_f64, f64::min);
    InteriorityReport {
        bound_holds: r.is_finite() && c > 0.0 && min_profile.iter().all(|m| *m > 0.0),
        min_profile,
        fitted_c: c,
        fitted_r: r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallnessReport {
    pub t0: f64,
    pub vertex: usize,
    pub minima: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest ratio `min_{[0, t0]} rho_i / delta` over vertices.
    pub fitted_k: f64,
}

/// Per-vertex minima up to the first grid time at which some component reaches `delta`.
pub fn smallness_propagation_probe(traj: &DensityTrajectory, delta: f64) -> Option<SmallnessReport> {
    let vals = &traj.path.values;
    let (k0, i0) = vals.iter().enumerate().find_map(|(k, v)| {
        v.iter().position(|x| *x <= delta).map(|i| (k, i))
    })?;
    let n = vals[0].len();
    let minima: Vec<f64> = (0..n)
        .map(|i| vals[..=k0].iter().map(|v| v[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let ratios: Vec<f64> = minima.iter().map(|m| m / delta).collect();
    let fitted_k = ratios.iter().copied().fold(0.0, f64::max);
    Some(SmallnessReport { t0: traj.path.grid.node(k0), vertex: i0, minima, ratios, fitted_k })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaitingTime {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub gap: Option<f64>,
}

/// First times at which the minimum component reaches `delta` and `delta / (2K)`.
pub fn waiting_time_probe(traj: &DensityTrajectory, k: f64, delta: f64) -> WaitingTime {
    let first_below = |level: f64| {
        traj.path.values.iter().enumerate().find_map(|(idx, v)| {
            (v.iter().copied().fold(f64::INFINITY, f64::min) <= level).then(|| traj.path.grid.node(idx))
        })
    };
    let t0 = first_below(delta);
    let t1 = t0.and_then(|_| first_below(delta / (2.0 * k)));
    WaitingTime { t0, t1, gap: t0.zip(t1).map(|(a, b)| b - a) }
}

/// Largest observed ratio `|A_ij| / ((mu^i + mu^j) h(mu^j/mu^i))` over random interior samples.
pub fn domination_ratio<R: Rng>(g: &WeightedGraph, flux: &dyn Flux, s: f64, samples: usize, rng: &mut R) -> f64 {
    let n = g.n();
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let w: Vec<f64> = (0..n).map(|_| (-8.0 * rng.random::<f64>()).exp()).collect();
        let total: f64 = w.iter().sum();
        let mu: Vec<f64> = w.iter().map(|x| x / total).collect();
        let a = flux.flux(s, &mu);
        let e = g.edges()[rng.random_range(0..g.edges().len())];
        for (i, j) in [(e.i, e.j), (e.j, e.i)] {
            let bound = (mu[i] + mu[j]) * flux.dominating(mu[j] / mu[i]);
            let val = a.get(i, j).abs();
            if val > 0.0 {
                worst = worst.max(if bound > 0.0 { val / bound } else { f64::INFINITY });
            }
        }
    }
    worst
}
