//! Limited-memory BFGS with Armijo backtracking. Objectives return `None` outside their
//! domain, which the line search treats as a rejected step.

use std::collections::VecDeque;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the sup-norm of the gradient falls below this.
    pub gtol: f64,
    /// Stop after `stall_window` iterations whose relative decrease is below this.
    pub ftol: f64,
    pub stall_window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 12, max_iter: 50_000, gtol: 1e-11, ftol: 1e-15, stall_window: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search failed to find an acceptable step.
    pub stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from a feasible starting point `x0`. Returns `None` if `x0` is infeasible.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut fx, mut gx) = f(&x0)?;
    let mut x = x0;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut quiet = 0usize;
    for it in 0..opts.max_iter {
        let gnorm = sup(&gx);
        if gnorm <= opts.gtol {
            return Some(LbfgsOutcome { x, f: fx, grad_norm: gnorm, iterations: it, converged: true, stalled: false });
        }
        // two-loop recursion
        let mut d: Vec<f64> = gx.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1e-300);
            d.iter_mut().for_each(|v| *v *= scale.min(1.0));
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&gx, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = gx.iter().map(|v| -v / gnorm.max(1e-300)).collect();
            slope = dot(&gx, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            return Some(LbfgsOutcome { x, f: fx, grad_norm: gnorm, iterations: it, converged: false, stalled: true });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        if fx - fnew <= opts.ftol * (1.0 + fnew.abs()) {
            quiet += 1;
        } else {
            quiet = 0;
        }
        x = xn;
        fx = fnew;
        gx = gn;
        if quiet >= opts.stall_window {
            return Some(LbfgsOutcome { x, f: fx, grad_norm: sup(&gx), iterations: it + 1, converged: true, stalled: false });
        }
    }
    let gnorm = sup(&gx);
    Some(LbfgsOutcome { x, f: fx, grad_norm: gnorm, iterations: opts.max_iter, converged: false, stalled: false })
}
