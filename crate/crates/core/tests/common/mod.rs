#![allow(dead_code)]

use graphmfg::{EdgeField, GameSpec, ModelSpec, WeightedGraph};
use rand::Rng;

pub const BASELINE_MU: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

pub fn baseline() -> GameSpec {
    GameSpec::new(WeightedGraph::cycle(4).unwrap(), ModelSpec::default(), 1.0).unwrap()
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

/// `theta(r, s) = int_0^1 r^(1-t) s^t dt` and its derivatives, by quadrature:
/// `[theta, d1, d2, d11, d12, d22]`.
pub fn log_mean_quadrature(r: f64, s: f64) -> [f64; 6] {
    let mut acc = [0.0; 6];
    for (t, w) in gauss_legendre(48) {
        let k = r.powf(1.0 - t) * s.powf(t);
        acc[0] += w * k;
        acc[1] += w * (1.0 - t) * k / r;
        acc[2] += w * t * k / s;
        acc[3] += w * -t * (1.0 - t) * k / (r * r);
        acc[4] += w * t * (1.0 - t) * k / (r * s);
        acc[5] += w * t * (t - 1.0) * k / (s * s);
    }
    acc
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, spread: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (spread * (rng.random::<f64>() - 0.5)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn random_field<R: Rng>(g: &WeightedGraph, rng: &mut R, scale: f64) -> EdgeField {
    EdgeField::from_edges(g, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
