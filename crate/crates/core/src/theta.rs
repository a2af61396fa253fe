//! Logarithmic mean and its partial derivatives.
//!
//! With `a = (r+s)/2` and `z = (r-s)/(r+s)` the logarithmic mean is
//! `theta = a * f(z)` where `f(z) = z / atanh(z)`. Near the diagonal `f` and its
//! derivatives are evaluated from their Taylor series in `z`.

use crate::error::{Error, Result};

/// Taylor coefficients of `z / atanh(z)` in powers of `z^2`.
const F_SERIES: [f64; 9] = [
    1.0,
    -1.0 / 3.0,
    -4.0 / 45.0,
    -44.0 / 945.0,
    -428.0 / 14175.0,
    -10196.0 / 467775.0,
    -10719068.0 / 638512875.0,
    -25865068.0 / 1915538625.0,
    -5472607916.0 / 488462349375.0,
];

const SERIES_RADIUS: f64 = 0.1;

/// Value, gradient and Hessian of `theta` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaJet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

fn check_nonneg(r: f64, s: f64) -> Result<()> {
    for v in [r, s] {
        if v < 0.0 || v.is_nan() {
            return Err(Error::NegativeInput { what: "theta", value: v });
        }
    }
    Ok(())
}

fn check_pos(r: f64, s: f64) -> Result<()> {
    for v in [r, s] {
        if !(v > 0.0) {
            return Err(Error::NegativeInput { what: "theta derivative", value: v });
        }
    }
    Ok(())
}

/// `atanh(z)` with `z = (r-s)/(r+s)`, computed from logarithms far from the diagonal.
fn atanh_rs(r: f64, s: f64, z: f64) -> f64 {
    if z.abs() < 0.5 {
        z.abs().atanh().copysign(z)
    } else {
        0.5 * (r.ln() - s.ln())
    }
}

/// `(f, f', f'')` at `z`, together with `1 - z` and `1 + z` computed without cancellation.
fn f_jet(r: f64, s: f64) -> (f64, f64, f64, f64, f64) {
    let sum = r + s;
    let z = (r - s) / sum;
    let om = 2.0 * s / sum;
    let op = 2.0 * r / sum;
    if z.abs() < SERIES_RADIUS {
        let z2 = z * z;
        let mut f = 0.0;
        let mut f1 = 0.0;
        let mut f2 = 0.0;
        for (k, &c) in F_SERIES.iter().enumerate().rev() {
            let k2 = 2.0 * k as f64;
            f = f * z2 + c;
            if k >= 1 {
                f1 = f1 * z2 + k2 * c;
                f2 = f2 * z2 + k2 * (k2 - 1.0) * c;
            }
        }
        (f, f1 * z, f2, om, op)
    } else {
        let a = atanh_rs(r, s, z);
        let a1 = 1.0 / (om * op);
        let a2 = 2.0 * z * a1 * a1;
        let num = a - z * a1;
        let f = z / a;
        let f1 = num / (a * a);
        let f2 = (-z * a2 * a - 2.0 * a1 * num) / (a * a * a);
        (f, f1, f2, om, op)
    }
}

/// Logarithmic mean: `(r-s)/(ln r - ln s)`, `r` on the diagonal, `0` if `rs = 0`.
pub fn theta(r: f64, s: f64) -> Result<f64> {
    check_nonneg(r, s)?;
    Ok(theta_unchecked(r, s))
}

pub(crate) fn theta_unchecked(r: f64, s: f64) -> f64 {
    if r == 0.0 || s == 0.0 {
        return 0.0;
    }
    if r == s {
        return r;
    }
    let sum = r + s;
    let z = (r - s) / sum;
    if z.abs() < SERIES_RADIUS {
        let z2 = z * z;
        let f = F_SERIES.iter().rev().fold(0.0, |acc, &c| acc * z2 + c);
        0.5 * sum * f
    } else {
        (r - s) / (2.0 * atanh_rs(r, s, z))
    }
}

pub fn theta_d1(r: f64, s: f64) -> Result<f64> {
    check_pos(r, s)?;
    let (f, f1, _, om, _) = f_jet(r, s);
    Ok(0.5 * (f + om * f1))
}

pub fn theta_d2(r: f64, s: f64) -> Result<f64> {
    theta_d1(s, r)
}

/// Value and first and second partial derivatives; requires `r, s > 0`.
pub fn theta_jet(r: f64, s: f64) -> Result<ThetaJet> {
    check_pos(r, s)?;
    Ok(theta_jet_unchecked(r, s))
}

pub(crate) fn theta_jet_unchecked(r: f64, s: f64) -> ThetaJet {
    let (f, f1, f2, om, op) = f_jet(r, s);
    let a = 0.5 * (r + s);
    let q = f2 / (4.0 * a);
    ThetaJet {
        value: if r == s { r } else { a * f },
        d1: 0.5 * (f + om * f1),
        d2: 0.5 * (f - op * f1),
        d11: om * om * q,
        d12: -om * op * q,
        d22: op * op * q,
    }
}

/// `h_log(u) = |u - 1| / ((1 + u) |ln u|)`, extended continuously by `1/2` at `u = 1`.
pub fn h_log(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    theta_unchecked(1.0, u) / (1.0 + u)
}
