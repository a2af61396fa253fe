//! Linearized forward-backward system and shooting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{grad_scaled, picard_solve, solve, MfgSolution, SolverOptions};
use crate::calculus::{div_unchecked, grad_unchecked, laplacian_unchecked, project_tangent, EdgeField};
use crate::error::{Error, Result};
use crate::grid::Path;
use crate::model::{MfgSystem, DENSITY_FLOOR};

/// Shooting matrices above this condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSolution {
    pub psi: Path,
    pub eta: Path,
    pub cond: f64,
}

struct Frame {
    rho: Vec<f64>,
    p: EdgeField,
}

/// Base states at the nodes and half steps of the grid.
struct Coefficients<'a> {
    sys: &'a dyn MfgSystem,
    lambda: f64,
    nodes: Vec<Frame>,
    mids: Vec<Frame>,
}

impl<'a> Coefficients<'a> {
    fn new(sys: &'a dyn MfgSystem, base: &MfgSolution) -> Self {
        let lambda = base.lambda;
        let nodes = (0..=base.grid().steps)
            .map(|k| Frame { rho: base.rho.values[k].clone(), p: grad_scaled(sys, &base.phi.values[k], lambda) })
            .collect();
        let mids = (0..base.grid().steps)
            .map(|k| Frame { rho: base.rho.midpoint(k), p: grad_scaled(sys, &base.phi.midpoint(k), lambda) })
            .collect();
        Self { sys, lambda, nodes, mids }
    }

    fn rhs(&self, f: &Frame, psi: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.sys.graph();
        let q = grad_unchecked(g, psi).scale(self.lambda);
        let mut dpsi = self.sys.dh_mu(&f.rho, &f.p, eta);
        for (o, (a, l)) in dpsi
            .iter_mut()
            .zip(self.sys.dh_p(&f.rho, &f.p, &q).into_iter().zip(laplacian_unchecked(g, psi)))
        {
            *o += a - l;
        }
        let flux = self.sys.db_mu(&f.rho, &f.p, eta).add(&self.sys.db_p(&f.rho, &f.p, &q));
        let mut deta = div_unchecked(g, &flux);
        for (o, l) in deta.iter_mut().zip(laplacian_unchecked(g, eta)) {
            *o += l;
        }
        (dpsi, deta)
    }

    /// Forward RK4 from `(psi(t), eta(t)) = (q0, nu)`.
    fn integrate(&self, h: f64, q0: &[f64], nu: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let steps = self.mids.len();
        let mut psi = Vec::with_capacity(steps + 1);
        let mut eta = Vec::with_capacity(steps + 1);
        psi.push(q0.to_vec());
        eta.push(nu.to_vec());
        let ax = |x: &[f64], a: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u + a * v).collect() };
        for k in 0..steps {
            let (p0, e0) = (&psi[k], &eta[k]);
            let (a1, b1) = self.rhs(&self.nodes[k], p0, e0);
            let (a2, b2) = self.rhs(&self.mids[k], &ax(p0, 0.5 * h, &a1), &ax(e0, 0.5 * h, &b1));
            let (a3, b3) = self.rhs(&self.mids[k], &ax(p0, 0.5 * h, &a2), &ax(e0, 0.5 * h, &b2));
            let (a4, b4) = self.rhs(&self.nodes[k + 1], &ax(p0, h, &a3), &ax(e0, h, &b3));
            let n = p0.len();
            let np: Vec<f64> = (0..n).map(|i| p0[i] + h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])).collect();
            let ne: Vec<f64> = (0..n).map(|i| e0[i] + h / 6.0 * (b1[i] + 2.0 * b2[i] + 2.0 * b3[i] + b4[i])).collect();
            psi.push(np);
            eta.push(ne);
        }
        (psi, eta)
    }

    fn mismatch(&self, psi_t: &[f64], eta_t: &[f64], rho_t: &[f64]) -> Vec<f64> {
        let dg = self.sys.dg(rho_t, eta_t);
        psi_t.iter().zip(dg).map(|(a, b)| a - b).collect()
    }
}

/// The linear part of the shooting map `q -> psi(T) - Dg eta(T)` for a fixed base solution.
pub struct ShootingMatrix<'a> {
    coeffs: Coefficients<'a>,
    base: &'a MfgSolution,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub cond: f64,
}

impl<'a> ShootingMatrix<'a> {
    pub fn new(sys: &'a dyn MfgSystem, base: &'a MfgSolution) -> Result<Self> {
        let coeffs = Coefficients::new(sys, base);
        let n = sys.graph().n();
        let h = base.grid().dt();
        let rho_t = base.rho.last().to_vec();
        let zero = vec![0.0; n];
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let (psi, eta) = coeffs.integrate(h, &e, &zero);
                coeffs.mismatch(&psi[psi.len() - 1], &eta[eta.len() - 1], &rho_t)
            })
            .collect();
        let m0 = DMatrix::from_fn(n, n, |i, k| cols[k][i]);
        let sv = m0.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularShooting { cond });
        }
        Ok(Self { coeffs, base, lu: m0.lu(), cond })
    }

    /// Solves the linearized system with initial density perturbation `nu`.
    pub fn solve(&self, nu: &[f64]) -> Result<LinearizedSolution> {
        let n = nu.len();
        if n != self.coeffs.sys.graph().n() {
            return Err(Error::DimensionMismatch { expected: self.coeffs.sys.graph().n(), got: n });
        }
        let h = self.base.grid().dt();
        let zero = vec![0.0; n];
        let (psi0, eta0) = self.coeffs.integrate(h, &zero, nu);
        let r = self.coeffs.mismatch(&psi0[psi0.len() - 1], &eta0[eta0.len() - 1], self.base.rho.last());
        let q = self
            .lu
            .solve(&DVector::from_iterator(n, r.iter().map(|v| -v)))
            .ok_or(Error::SingularShooting { cond: f64::INFINITY })?;
        let q: Vec<f64> = q.iter().copied().collect();
        let (psi, eta) = self.coeffs.integrate(h, &q, nu);
        let grid = self.base.grid();
        Ok(LinearizedSolution { psi: Path::new(grid, psi)?, eta: Path::new(grid, eta)?, cond: self.cond })
    }
}

/// Solves the linearized system around `base` for the tangent direction `nu`.
pub fn linearized_solve(sys: &dyn MfgSystem, base: &MfgSolution, nu: &[f64]) -> Result<LinearizedSolution> {
    let sum: f64 = nu.iter().sum();
    let scale = nu.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if sum.abs() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("direction must have zero sum, got {sum}")));
    }
    ShootingMatrix::new(sys, base)?.solve(nu)
}

/// Tangent derivative of the value by shooting: entry `[i][k]` is `psi^i(t)` for the
/// direction `P e_k`, so each row is the gradient of `u^i` in the zero-sum subspace.
pub fn dmu_value_shooting(sys: &dyn MfgSystem, base: &MfgSolution) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = sys.graph().n();
    let shooting = ShootingMatrix::new(sys, base)?;
    let mut out = vec![vec![0.0; n]; n];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let sol = shooting.solve(&project_tangent(&e))?;
        for (i, row) in out.iter_mut().enumerate() {
            row[k] = sol.psi.first()[i];
        }
    }
    Ok((out, shooting.cond))
}

fn solve_near(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    opts: &SolverOptions,
    warm: Option<&MfgSolution>,
) -> Result<MfgSolution> {
    match warm {
        Some(w) => picard_solve(sys, t, mu, 1.0, opts, Some(&w.phi)).or_else(|_| solve(sys, t, mu, opts)),
        None => solve(sys, t, mu, opts),
    }
}

/// Tangent derivative of the value by central differences along spanning-tree directions
/// `(e_i - e_j)/sqrt 2`, returned in the same layout as [`dmu_value_shooting`].
/// The step is halved until `mu +- h d` stays interior; the step used is returned.
pub fn dmu_value_fd(
    sys: &dyn MfgSystem,
    t: f64,
    mu: &[f64],
    h: f64,
    opts: &SolverOptions,
    warm: Option<&MfgSolution>,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let g = sys.graph();
    let n = g.n();
    let tree = g.spanning_tree();
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut step = h;
    let min_mu = mu.iter().copied().fold(f64::INFINITY, f64::min);
    while min_mu - step * r2 <= DENSITY_FLOOR {
        step *= 0.5;
        if step < 1e-14 {
            return Err(Error::InvalidArgument("cannot fit a finite-difference step inside the simplex".into()));
        }
    }
    let cols: Vec<Result<Vec<f64>>> = tree
        .par_iter()
        .map(|&(a, b)| {
            let mut plus = mu.to_vec();
            let mut minus = mu.to_vec();
            plus[a] += step * r2;
            plus[b] -= step * r2;
            minus[a] -= step * r2;
            minus[b] += step * r2;
            let up = solve_near(sys, t, &plus, opts, warm)?;
            let down = solve_near(sys, t, &minus, opts, warm)?;
            Ok(up.value().iter().zip(down.value()).map(|(x, y)| (x - y) / (2.0 * step)).collect())
        })
        .collect();
    let mut w = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for (c, (&(a, b), col)) in tree.iter().zip(cols).enumerate() {
        let col = col?;
        for i in 0..n {
            w[(i, c)] = col[i];
        }
        v[(a, c)] = r2;
        v[(b, c)] = -r2;
    }
    let last = n - 1;
    for i in 0..n {
        v[(i, last)] = 1.0 / (n as f64).sqrt();
    }
    let vinv = v.try_inverse().ok_or_else(|| Error::InvalidArgument("spanning-tree directions are degenerate".into()))?;
    let d = w * vinv;
    Ok(((0..n).map(|i| (0..n).map(|k| d[(i, k)]).collect()).collect(), step))
}
