//! Markov-chain layer: time-inhomogeneous rate matrices, propagators, uniformized sampling,
//! expected costs, and the Nash certificate of an equilibrium feedback.
//!
//! A player using control `v` against a population `rho` jumps with rates
//! `Q^{ij} = omega_ij - sqrt(omega_ij) d1theta(rho^i, rho^j) (v + grad log rho)^{ij}`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{grad_unchecked, EdgeField};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::grid::{Path, TimeGrid};
use crate::model::{GameSpec, ModelSpec};
use crate::solver::{solve, MfgSolution, SolverOptions};
use crate::theta::theta_jet_unchecked;

/// Uniformization rate as a multiple of the largest exit rate on the grid.
pub const UNIFORMIZATION_SLACK: f64 = 1.05;

/// Off-diagonal rates above `-ADMISSIBILITY_TOL` count as nonnegative.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

type RateFn<'a> = Box<dyn Fn(f64) -> DMatrix<f64> + Send + Sync + 'a>;

/// Generator path on a grid, sampled at nodes and step midpoints, with access at any time.
pub struct RateMatrixPath<'a> {
    grid: TimeGrid,
    /// Index `2k` is node `k`, `2k + 1` the midpoint of step `k`.
    frames: Vec<DMatrix<f64>>,
    rate_fn: RateFn<'a>,
    /// Ordered pairs allowed to carry rates.
    support: Vec<(usize, usize)>,
}

fn half_step_time(grid: &TimeGrid, j: usize) -> f64 {
    if j == 2 * grid.steps {
        grid.t1
    } else {
        grid.t0 + 0.5 * grid.dt() * j as f64
    }
}

/// Overwrites the diagonal with minus the off-diagonal row sums.
fn fix_diagonal(q: &mut DMatrix<f64>) {
    for i in 0..q.nrows().min(q.ncols()) {
        let out: f64 = (0..q.ncols()).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -out;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateViolation {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// Smallest off-diagonal rate over sampled times.
    pub min_rate: f64,
    pub max_exit_rate: f64,
    /// Negative rates, at most one per sampled time and ordered pair.
    pub violations: Vec<RateViolation>,
}

impl<'a> RateMatrixPath<'a> {
    /// Builds the path from `rates(s)`; diagonals are recomputed from the off-diagonal entries,
    /// every off-diagonal pair counts as support.
    pub fn from_fn(grid: TimeGrid, rates: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'a) -> Result<Self> {
        let rate_fn: RateFn<'a> = Box::new(move |s| {
            let mut q = rates(s);
            fix_diagonal(&mut q);
            q
        });
        let frames: Vec<DMatrix<f64>> = (0..=2 * grid.steps).map(|j| rate_fn(half_step_time(&grid, j))).collect();
        let n = frames[0].nrows();
        if frames.iter().any(|q| q.nrows() != n || q.ncols() != n) {
            return Err(Error::InvalidArgument("rate matrices must be square with a fixed size".into()));
        }
        let support = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        Ok(Self { grid, frames, rate_fn, support })
    }

    /// Restricts the admissibility margin to the ordered pairs of graph edges.
    pub fn with_support(mut self, g: &WeightedGraph) -> Self {
        self.support = g.edges().iter().flat_map(|e| [(e.i, e.j), (e.j, e.i)]).collect();
        self
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.frames[0].nrows()
    }

    /// Generator at grid node `k`.
    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        &self.frames[2 * k]
    }

    pub fn at(&self, s: f64) -> DMatrix<f64> {
        (self.rate_fn)(s)
    }

    pub fn admissibility(&self) -> Admissibility {
        let mut out = Admissibility { admissible: true, min_rate: f64::INFINITY, max_exit_rate: 0.0, violations: Vec::new() };
        for (j, q) in self.frames.iter().enumerate() {
            for a in 0..q.nrows() {
                out.max_exit_rate = out.max_exit_rate.max(-q[(a, a)]);
            }
            for &(a, b) in &self.support {
                out.min_rate = out.min_rate.min(q[(a, b)]);
                if q[(a, b)] < -ADMISSIBILITY_TOL {
                    out.admissible = false;
                    out.violations.push(RateViolation { time: half_step_time(&self.grid, j), from: a, to: b, rate: q[(a, b)] });
                }
            }
        }
        out
    }

    /// `Psi(s_a, s_b)` between grid nodes `a <= b`, from `d/dt Psi = Psi Q` by RK4.
    pub fn propagator(&self, a: usize, b: usize) -> Result<DMatrix<f64>> {
        if a > b || b > self.grid.steps {
            return Err(Error::InvalidArgument(format!(
                "need node indices a <= b <= {}, got {a}, {b}",
                self.grid.steps
            )));
        }
        let h = self.grid.dt();
        let n = self.n();
        let mut psi = DMatrix::<f64>::identity(n, n);
        for k in a..b {
            let (q0, qm, q1) = (&self.frames[2 * k], &self.frames[2 * k + 1], &self.frames[2 * k + 2]);
            let k1 = &psi * q0;
            let k2 = (&psi + &k1 * (0.5 * h)) * qm;
            let k3 = (&psi + &k2 * (0.5 * h)) * qm;
            let k4 = (&psi + &k3 * h) * q1;
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        Ok(psi)
    }

    /// Laws `mu Psi(t0, s_k)` at every node.
    pub fn laws(&self, mu: &[f64]) -> Result<Vec<Vec<f64>>> {
        if mu.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: mu.len() });
        }
        let mut law = nalgebra::RowDVector::from_row_slice(mu);
        let mut out = vec![mu.to_vec()];
        for k in 0..self.grid.steps {
            law = &law * self.propagator(k, k + 1)?;
            out.push(law.iter().copied().collect());
        }
        Ok(out)
    }
}

/// Running cost per vertex at the half-step times of a grid, plus terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub running: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
}

impl CostModel {
    pub fn from_fn(grid: TimeGrid, running: impl Fn(f64) -> Vec<f64>, terminal: Vec<f64>) -> Self {
        Self { running: (0..=2 * grid.steps).map(|j| running(half_step_time(&grid, j))).collect(), terminal }
    }
}

fn stage(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| u + a * v).collect()
}

fn check_cost(q: &RateMatrixPath<'_>, cost: &CostModel) -> Result<()> {
    if cost.running.len() != q.frames.len() {
        return Err(Error::DimensionMismatch { expected: q.frames.len(), got: cost.running.len() });
    }
    if cost.terminal.len() != q.n() || cost.running.iter().any(|r| r.len() != q.n()) {
        return Err(Error::DimensionMismatch { expected: q.n(), got: cost.terminal.len() });
    }
    Ok(())
}

/// Expected cost from every start vertex at the initial time, from the backward Kolmogorov
/// equation `-z' = Q z + cost`, `z(T) = terminal`, by RK4.
pub fn cost_ode(q: &RateMatrixPath<'_>, cost: &CostModel) -> Result<Vec<f64>> {
    check_cost(q, cost)?;
    let h = q.grid.dt();
    let rhs = |j: usize, z: &[f64]| -> Vec<f64> {
        let qz = &q.frames[j] * DVector::from_column_slice(z);
        (0..z.len()).map(|i| -(qz[i] + cost.running[j][i])).collect()
    };
    let mut z = cost.terminal.clone();
    for k in (0..q.grid.steps).rev() {
        let k1 = rhs(2 * k + 2, &z);
        let k2 = rhs(2 * k + 1, &stage(&z, -0.5 * h, &k1));
        let k3 = rhs(2 * k + 1, &stage(&z, -0.5 * h, &k2));
        let k4 = rhs(2 * k, &stage(&z, -h, &k3));
        for i in 0..z.len() {
            z[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(z)
}

/// Cumulative integrals from `t0` at the grid nodes, by Simpson's rule on each step.
fn cumulative(grid: TimeGrid, half_steps: &[Vec<f64>]) -> Result<Path> {
    let h = grid.dt();
    let n = half_steps[0].len();
    let mut acc = vec![vec![0.0; n]];
    for k in 0..grid.steps {
        let (a, m, b) = (&half_steps[2 * k], &half_steps[2 * k + 1], &half_steps[2 * k + 2]);
        let next = (0..n).map(|i| acc[k][i] + h / 6.0 * (a[i] + 4.0 * m[i] + b[i])).collect();
        acc.push(next);
    }
    Path::new(grid, acc)
}

/// One sampled path: start vertex and jumps `(time, from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSample {
    pub start: usize,
    pub jumps: Vec<(f64, usize, usize)>,
}

impl ChainSample {
    pub fn end(&self) -> usize {
        self.jumps.last().map_or(self.start, |j| j.2)
    }

    /// Sojourns `(from, to, vertex)` covering `[t0, t1]`.
    pub fn sojourns(&self, t0: f64, t1: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let (mut from, mut x) = (t0, self.start);
        for &(s, _, y) in &self.jumps {
            out.push((from, s, x));
            from = s;
            x = y;
        }
        out.push((from, t1, x));
        out
    }
}

/// Samples path `index` from `start` by uniformization at rate
/// `UNIFORMIZATION_SLACK * max exit rate`; the generator is seeded by `seed` on stream `index`.
pub fn sample_path(q: &RateMatrixPath<'_>, start: usize, seed: u64, index: u64) -> Result<ChainSample> {
    let n = q.n();
    if start >= n {
        return Err(Error::InvalidArgument(format!("start vertex {} out of range", start + 1)));
    }
    let bound = UNIFORMIZATION_SLACK * q.frames.iter().flat_map(|m| (0..n).map(move |i| -m[(i, i)])).fold(0.0, f64::max);
    let mut sample = ChainSample { start, jumps: Vec::new() };
    if bound == 0.0 {
        return Ok(sample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (mut x, mut s) = (start, q.grid.t0);
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        s -= u.ln() / bound;
        if s >= q.grid.t1 {
            return Ok(sample);
        }
        let rates = q.at(s);
        if -rates[(x, x)] > bound {
            return Err(Error::InvalidArgument(format!(
                "exit rate {} exceeds the uniformization bound {bound} at s = {s}",
                -rates[(x, x)]
            )));
        }
        let mut r = rng.random::<f64>() * bound;
        for y in (0..n).filter(|&y| y != x) {
            r -= rates[(x, y)];
            if r < 0.0 {
                sample.jumps.push((s, x, y));
                x = y;
                break;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, std_error: (var / n).sqrt(), paths: samples.len() }
    }

    /// `|mean - target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn monte_carlo(
    q: &RateMatrixPath<'_>,
    start: usize,
    paths: usize,
    seed: u64,
    score: impl Fn(&ChainSample) -> f64 + Sync,
) -> Result<McEstimate> {
    if paths < 2 {
        return Err(Error::InvalidArgument("need at least two Monte Carlo paths".into()));
    }
    let samples = (0..paths as u64)
        .into_par_iter()
        .map(|k| sample_path(q, start, seed, k).map(|p| score(&p)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// Monte Carlo estimate of the expected cost from `start`; running costs are integrated
/// between jumps with the same quadrature as [`cost_ode`].
pub fn cost_mc(q: &RateMatrixPath<'_>, cost: &CostModel, start: usize, paths: usize, seed: u64) -> Result<McEstimate> {
    check_cost(q, cost)?;
    let acc = cumulative(q.grid, &cost.running)?;
    let (t0, t1) = (q.grid.t0, q.grid.t1);
    monte_carlo(q, start, paths, seed, |p| {
        let running: f64 = p.sojourns(t0, t1).iter().map(|&(a, b, x)| acc.at(b)[x] - acc.at(a)[x]).sum();
        running + cost.terminal[p.end()]
    })
}

/// Monte Carlo mean of the martingale term
/// `sum_jumps [f(s, X_s) - f(s, X_s-)] - int (Q f)(s, X_s) ds`, which vanishes in expectation.
pub fn martingale_probe(
    q: &RateMatrixPath<'_>,
    f: &(dyn Fn(f64) -> Vec<f64> + Sync),
    start: usize,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    let grid = q.grid;
    let qf: Vec<Vec<f64>> = q
        .frames
        .iter()
        .enumerate()
        .map(|(j, m)| (m * DVector::from_vec(f(half_step_time(&grid, j)))).iter().copied().collect())
        .collect();
    let acc = cumulative(grid, &qf)?;
    monte_carlo(q, start, paths, seed, |p| {
        let jumps: f64 = p.jumps.iter().map(|&(s, a, b)| {
            let fs = f(s);
            fs[b] - fs[a]
        }).sum();
        let comp: f64 = p.sojourns(grid.t0, grid.t1).iter().map(|&(a, b, x)| acc.at(b)[x] - acc.at(a)[x]).sum();
        jumps - comp
    })
}

/// `max_k |mu Psi(t0, s_k) - rho(s_k)|` for a population path on the same grid.
pub fn consistency_check(q: &RateMatrixPath<'_>, rho: &Path) -> Result<f64> {
    if rho.grid != q.grid {
        return Err(Error::InvalidArgument("population path and rates use different grids".into()));
    }
    let laws = q.laws(rho.first())?;
    Ok(laws.iter().zip(&rho.values).map(|(a, b)| crate::calculus::max_abs_diff(a, b)).fold(0.0, f64::max))
}

/// A player control: the equilibrium feedback plus a skew shift, optionally modulated in time
/// by `1 + modulation * sin(2 pi (s - t0) / (T - t0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub shift: EdgeField,
    pub modulation: f64,
}

impl Control {
    pub fn optimal(g: &WeightedGraph) -> Self {
        Self { shift: EdgeField::zeros(g.n()), modulation: 0.0 }
    }

    /// `v[a]`: adds `a^l` to `v^{il}` and subtracts it from `v^{li}` for each neighbor `l` of
    /// `vertex`; `a` is indexed by the other `n - 1` vertices in increasing order.
    pub fn deviation(g: &WeightedGraph, vertex: usize, a: &[f64]) -> Result<Self> {
        let n = g.n();
        if vertex >= n {
            return Err(Error::InvalidArgument(format!("vertex {} out of range", vertex + 1)));
        }
        if a.len() != n - 1 {
            return Err(Error::DimensionMismatch { expected: n - 1, got: a.len() });
        }
        let mut shift = EdgeField::zeros(n);
        for &l in g.neighbors(vertex) {
            shift.set(vertex, l, a[if l < vertex { l } else { l - 1 }]);
        }
        Ok(Self { shift, modulation: 0.0 })
    }

    fn factor(&self, grid: &TimeGrid, s: f64) -> f64 {
        1.0 + self.modulation * (2.0 * std::f64::consts::PI * (s - grid.t0) / (grid.t1 - grid.t0)).sin()
    }
}

/// `w = v + grad log rho` for the control at time `s`, with `v* + grad log rho = h'(-grad phi)`.
fn control_field(spec: &GameSpec, sol: &MfgSolution, control: &Control, s: f64) -> (Vec<f64>, EdgeField) {
    let f = spec.model.family;
    let rho = sol.rho.at(s);
    let p = grad_unchecked(&spec.graph, &sol.phi.at(s));
    let w = EdgeField::from_edges(&spec.graph, |_, e| f.h1(-p.get(e.i, e.j)))
        .add(&control.shift.scale(control.factor(&sol.grid(), s)));
    (rho, w)
}

/// `Q[v | rho]` for the equilibrium population of `sol`.
pub fn rate_matrix<'a>(spec: &'a GameSpec, sol: &'a MfgSolution, control: Control) -> Result<RateMatrixPath<'a>> {
    if control.shift.n() != spec.graph.n() {
        return Err(Error::DimensionMismatch { expected: spec.graph.n(), got: control.shift.n() });
    }
    RateMatrixPath::from_fn(sol.grid(), move |s| {
        let (rho, w) = control_field(spec, sol, &control, s);
        let n = rho.len();
        let mut q = DMatrix::zeros(n, n);
        for e in spec.graph.edges() {
            let jet = theta_jet_unchecked(rho[e.i], rho[e.j]);
            q[(e.i, e.j)] = e.omega - e.sqrt_omega * jet.d1 * w.get(e.i, e.j);
            q[(e.j, e.i)] = e.omega - e.sqrt_omega * jet.d2 * w.get(e.j, e.i);
        }
        q
    })
    .map(|path| path.with_support(&spec.graph))
}

/// Running cost `L(x, rho, v + grad log rho)` and terminal cost `g(x, rho(T))`.
pub fn player_costs(spec: &GameSpec, sol: &MfgSolution, control: &Control) -> CostModel {
    CostModel::from_fn(
        sol.grid(),
        |s| {
            let (rho, w) = control_field(spec, sol, control, s);
            spec.running_cost_raw(&rho, &w)
        },
        spec.dterminal_cost(sol.rho.last()),
    )
}

/// Equilibrium from `(0, mu)` and the admissibility of its feedback.
pub fn optimal_control(spec: &GameSpec, mu: &[f64], opts: &SolverOptions) -> Result<(MfgSolution, Admissibility)> {
    let sol = solve(spec, 0.0, mu, opts)?;
    let adm = rate_matrix(spec, &sol, Control::optimal(&spec.graph))?.admissibility();
    Ok((sol, adm))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationGap {
    pub vertex: usize,
    /// Nonzero only on neighbors of `vertex`; indexed by vertex with `a[vertex] = 0`.
    pub shift: Vec<f64>,
    pub modulation: f64,
    /// `J(0, vertex; v*, v*[a]) - J(0, vertex; v*, v*)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub paths: usize,
    pub seed: u64,
    pub cost: Vec<McEstimate>,
    /// `max_x |MC(x) - J*(x)| / SE(x)`.
    pub max_cost_z: f64,
    pub martingale: Vec<McEstimate>,
    pub max_martingale_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorCheck {
    /// `max |sum_j Psi_ij - 1|` over sampled propagators.
    pub row_sum_gap: f64,
    pub min_entry: f64,
    pub max_entry: f64,
    /// `max |Psi(a, c) - Psi(a, b) Psi(b, c)|` over sampled node triples.
    pub chapman_kolmogorov_gap: f64,
    /// `max_k |mu Psi(t0, s_k) - rho(s_k)|`.
    pub consistency_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashReport {
    pub admissible: bool,
    pub violations: Vec<RateViolation>,
    pub min_rate: f64,
    pub potential: Vec<f64>,
    pub equilibrium_cost: Option<Vec<f64>>,
    /// `max_i |J(0, i; v*, v*) - u(0, e_i)|`.
    pub equality_gap: Option<f64>,
    pub deviation_gaps: Vec<DeviationGap>,
    pub min_deviation_gap: Option<f64>,
    pub skipped_deviations: usize,
    pub mc: Option<McReport>,
    pub propagator: Option<PropagatorCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashOptions {
    /// Magnitudes used along each coordinate direction of `a`.
    pub magnitudes: Vec<f64>,
    pub random_directions: usize,
    /// Time modulations applied to every random direction in addition to the constant one.
    pub modulations: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            magnitudes: vec![-0.5, -0.25, 0.25, 0.5],
            random_directions: 20,
            modulations: vec![0.5],
            paths: 100_000,
            seed: 2024,
        }
    }
}

fn deviation_plan(g: &WeightedGraph, opts: &NashOptions) -> Vec<(usize, Vec<f64>, f64)> {
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut plan = Vec::new();
    for vertex in 0..n {
        for &l in g.neighbors(vertex) {
            let c = if l < vertex { l } else { l - 1 };
            for &m in &opts.magnitudes {
                let mut a = vec![0.0; n - 1];
                a[c] = m;
                plan.push((vertex, a, 0.0));
            }
        }
        let scale = opts.magnitudes.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for _ in 0..opts.random_directions {
            let dir: Vec<f64> = (0..n - 1).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let r = scale * rng.random::<f64>();
            let a: Vec<f64> = dir.iter().map(|x| r * x / norm).collect();
            for &md in std::iter::once(&0.0).chain(&opts.modulations) {
                plan.push((vertex, a.clone(), md));
            }
        }
    }
    plan
}

pub fn propagator_check(q: &RateMatrixPath<'_>, rho: &Path) -> Result<PropagatorCheck> {
    let steps = q.grid.steps;
    let mut out = PropagatorCheck {
        row_sum_gap: 0.0,
        min_entry: f64::INFINITY,
        max_entry: f64::NEG_INFINITY,
        chapman_kolmogorov_gap: 0.0,
        consistency_gap: consistency_check(q, rho)?,
    };
    let marks = [0, steps / 4, steps / 2, 3 * steps / 4, steps];
    for a in 0..marks.len() {
        for c in a + 1..marks.len() {
            let full = q.propagator(marks[a], marks[c])?;
            for i in 0..full.nrows() {
                out.row_sum_gap = out.row_sum_gap.max((full.row(i).sum() - 1.0).abs());
            }
            out.min_entry = out.min_entry.min(full.min());
            out.max_entry = out.max_entry.max(full.max());
            for b in a + 1..c {
                let split = q.propagator(marks[a], marks[b])? * q.propagator(marks[b], marks[c])?;
                out.chapman_kolmogorov_gap = out.chapman_kolmogorov_gap.max((&full - split).abs().max());
            }
        }
    }
    Ok(out)
}

/// Certifies the equilibrium feedback of `sol` (a solve from time 0) as a Nash control:
/// the equality case of the cost identity, nonnegative gaps over the deviation grid,
/// Monte Carlo agreement, propagator identities and the martingale property.
/// When the feedback is not admissible only the violations are reported.
pub fn nash_certificate(spec: &GameSpec, sol: &MfgSolution, opts: &NashOptions) -> Result<NashReport> {
    let g = &spec.graph;
    let n = g.n();
    let star = rate_matrix(spec, sol, Control::optimal(g))?;
    let adm = star.admissibility();
    let mut report = NashReport {
        admissible: adm.admissible,
        violations: adm.violations.clone(),
        min_rate: adm.min_rate,
        potential: sol.value().to_vec(),
        equilibrium_cost: None,
        equality_gap: None,
        deviation_gaps: Vec::new(),
        min_deviation_gap: None,
        skipped_deviations: 0,
        mc: None,
        propagator: None,
    };
    if !adm.admissible {
        return Ok(report);
    }
    let star_cost = player_costs(spec, sol, &Control::optimal(g));
    let j_star = cost_ode(&star, &star_cost)?;
    report.equality_gap = Some(crate::calculus::max_abs_diff(&j_star, sol.value()));

    let outcomes = deviation_plan(g, opts)
        .into_par_iter()
        .map(|(vertex, a, modulation)| {
            let mut control = Control::deviation(g, vertex, &a)?;
            control.modulation = modulation;
            let costs = player_costs(spec, sol, &control);
            let q = rate_matrix(spec, sol, control)?;
            if !q.admissibility().admissible {
                return Ok(None);
            }
            let j = cost_ode(&q, &costs)?;
            let mut shift = vec![0.0; n];
            for (k, v) in a.iter().enumerate() {
                shift[if k < vertex { k } else { k + 1 }] = *v;
            }
            for (k, s) in shift.iter_mut().enumerate() {
                if g.omega(vertex, k) == 0.0 {
                    *s = 0.0;
                }
            }
            Ok(Some(DeviationGap { vertex, shift, modulation, gap: j[vertex] - j_star[vertex] }))
        })
        .collect::<Result<Vec<_>>>()?;
    report.skipped_deviations = outcomes.iter().filter(|o| o.is_none()).count();
    report.deviation_gaps = outcomes.into_iter().flatten().collect();
    report.min_deviation_gap = Some(report.deviation_gaps.iter().map(|d| d.gap).fold(f64::INFINITY, f64::min));

    if opts.paths > 0 {
        let phi = |s: f64| sol.phi.at(s);
        let mut cost = Vec::with_capacity(n);
        let mut martingale = Vec::with_capacity(n);
        for x in 0..n {
            cost.push(cost_mc(&star, &star_cost, x, opts.paths, opts.seed.wrapping_add(x as u64))?);
            martingale.push(martingale_probe(&star, &phi, x, opts.paths, opts.seed.wrapping_add((n + x) as u64))?);
        }
        let max_cost_z = cost.iter().zip(&j_star).map(|(m, j)| m.z_score(*j)).fold(0.0, f64::max);
        let max_martingale_z = martingale.iter().map(|m| m.z_score(0.0)).fold(0.0, f64::max);
        report.mc = Some(McReport { paths: opts.paths, seed: opts.seed, cost, max_cost_z, martingale, max_martingale_z });
    }
    report.propagator = Some(propagator_check(&star, &sol.rho)?);
    report.equilibrium_cost = Some(j_star);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusPoint {
    pub n: usize,
    pub omega: f64,
    pub steps: usize,
    pub min_rate: f64,
    pub admissible: bool,
}

/// `mu_i` proportional to `1 + 0.5 cos(2 pi i / n)`.
pub fn torus_profile(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Admissibility margin `min Q^{ij}` of the equilibrium feedback on the cycles `C_n` with
/// weight `n^2`, started from [`torus_profile`].
pub fn torus_sweep(sizes: &[usize], model: ModelSpec, horizon: f64, opts: &SolverOptions) -> Result<Vec<TorusPoint>> {
    sizes
        .par_iter()
        .map(|&n| {
            let omega = (n * n) as f64;
            let spec = GameSpec::new(WeightedGraph::cycle_weighted(n, omega)?, model, horizon)?;
            let (sol, adm) = optimal_control(&spec, &torus_profile(n), opts)?;
            Ok(TorusPoint { n, omega, steps: sol.grid().steps, min_rate: adm.min_rate, admissible: adm.admissible })
        })
        .collect()
}

/// True when each margin strictly exceeds the previous one.
pub fn monotone_increasing(points: &[TorusPoint]) -> bool {
    points.windows(2).all(|w| w[1].min_rate > w[0].min_rate)
}
