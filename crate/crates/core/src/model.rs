//! Separable Lagrangian/Hamiltonian families, couplings, terminal costs and the
//! maps `(H, B, g)` that drive the forward-backward system.

use serde::{Deserialize, Serialize};

use crate::calculus::{dot, EdgeField};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::theta::{theta_jet_unchecked, theta_unchecked};

/// Densities below this floor are rejected by every `mu`-derivative.
pub const DENSITY_FLOOR: f64 = 1e-10;

/// Convex conjugate pair `(l, h)` applied on every edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `l(s) = s^2/2`, `h(p) = p^2/2`.
    Quadratic,
    /// `l(s) = |s|^p0/p0`, `h(p) = |p|^q/q` with `1/p0 + 1/q = 1`.
    Power { p0: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        if let Family::Power { p0 } = *self {
            if !(p0 > 1.0 && p0 <= 4.0) {
                return Err(Error::InvalidArgument(format!("power exponent p0 must lie in (1, 4], got {p0}")));
            }
        }
        Ok(())
    }

    pub fn p0(&self) -> f64 {
        match *self {
            Family::Quadratic => 2.0,
            Family::Power { p0 } => p0,
        }
    }

    /// Conjugate exponent `p0' = p0/(p0-1)`.
    pub fn conjugate(&self) -> f64 {
        let p0 = self.p0();
        p0 / (p0 - 1.0)
    }

    pub fn l(&self, s: f64) -> f64 {
        match *self {
            Family::Quadratic => 0.5 * s * s,
            Family::Power { p0 } => s.abs().powf(p0) / p0,
        }
    }

    pub fn l1(&self, s: f64) -> f64 {
        match *self {
            Family::Quadratic => s,
            Family::Power { p0 } => s.signum() * s.abs().powf(p0 - 1.0),
        }
    }

    pub fn l2(&self, s: f64) -> f64 {
        match *self {
            Family::Quadratic => 1.0,
            Family::Power { p0 } => (p0 - 1.0) * s.abs().powf(p0 - 2.0),
        }
    }

    pub fn h(&self, p: f64) -> f64 {
        match *self {
            Family::Quadratic => 0.5 * p * p,
            Family::Power { .. } => {
                let q = self.conjugate();
                p.abs().powf(q) / q
            }
        }
    }

    pub fn h1(&self, p: f64) -> f64 {
        match *self {
            Family::Quadratic => p,
            Family::Power { .. } => p.signum() * p.abs().powf(self.conjugate() - 1.0),
        }
    }

    pub fn h2(&self, p: f64) -> f64 {
        match *self {
            Family::Quadratic => 1.0,
            Family::Power { .. } => {
                let q = self.conjugate();
                (q - 1.0) * p.abs().powf(q - 2.0)
            }
        }
    }

    /// Coercivity constant `C` with `L(mu, m) >= C (|m|^p0 - 1)` on the simplex,
    /// where `|m|` is the edge norm and `n_edges` the number of edges.
    pub fn coercivity(&self, n_edges: usize) -> f64 {
        match *self {
            Family::Quadratic => 0.5,
            Family::Power { p0 } => {
                let e = n_edges as f64;
                e.powf(1.0 - 0.5 * p0).min(1.0) / p0
            }
        }
    }
}

/// Model section of an experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    pub family: Family,
    /// Coupling strength in `F(mu) = -(cF/2)|mu|^2`.
    pub c_f: f64,
    /// Terminal strength in `U_T(mu) = (cT/2)|mu|^2`.
    pub c_t: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FamilyTag {
    Quadratic,
    Power,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    family: FamilyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p0: Option<f64>,
    #[serde(rename = "cF", default = "one")]
    c_f: f64,
    #[serde(rename = "cT", default = "one")]
    c_t: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = String;

    fn try_from(raw: RawModelSpec) -> std::result::Result<Self, String> {
        let family = match (raw.family, raw.p0) {
            (FamilyTag::Quadratic, None) => Family::Quadratic,
            (FamilyTag::Quadratic, Some(_)) => return Err("p0 is only valid for the power family".into()),
            (FamilyTag::Power, Some(p0)) => Family::Power { p0 },
            (FamilyTag::Power, None) => return Err("power family requires p0".into()),
        };
        Ok(Self { family, c_f: raw.c_f, c_t: raw.c_t })
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        let (family, p0) = match m.family {
            Family::Quadratic => (FamilyTag::Quadratic, None),
            Family::Power { p0 } => (FamilyTag::Power, Some(p0)),
        };
        Self { family, p0, c_f: m.c_f, c_t: m.c_t }
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { family: Family::Quadratic, c_f: 1.0, c_t: 1.0 }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if !(self.c_f > 0.0 && self.c_f.is_finite()) {
            return Err(Error::InvalidArgument(format!("cF must be positive, got {}", self.c_f)));
        }
        if !(self.c_t >= 0.0 && self.c_t.is_finite()) {
            return Err(Error::InvalidArgument(format!("cT must be nonnegative, got {}", self.c_t)));
        }
        Ok(())
    }
}

/// A game instance: graph, model and horizon.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub graph: WeightedGraph,
    pub model: ModelSpec,
    pub horizon: f64,
}

pub(crate) fn check_interior(mu: &[f64]) -> Result<()> {
    for (i, &v) in mu.iter().enumerate() {
        if !(v > DENSITY_FLOOR) {
            return Err(Error::BoundaryDensity { vertex: i, value: v, floor: DENSITY_FLOOR });
        }
    }
    Ok(())
}

impl GameSpec {
    pub fn new(graph: WeightedGraph, model: ModelSpec, horizon: f64) -> Result<Self> {
        model.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { graph, model, horizon })
    }

    fn check_dims(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.graph.n() {
            return Err(Error::DimensionMismatch { expected: self.graph.n(), got: mu.len() });
        }
        Ok(())
    }

    fn fam(&self) -> Family {
        self.model.family
    }

    pub fn hamiltonian(&self, mu: &[f64], p: &EdgeField) -> Result<f64> {
        self.check_dims(mu)?;
        let f = self.fam();
        Ok(self
            .graph
            .edges()
            .iter()
            .map(|e| theta_unchecked(mu[e.i], mu[e.j]) * f.h(p.get(e.i, e.j)))
            .sum())
    }

    /// Extended-valued Lagrangian; `+inf` when some edge has zero mobility but nonzero flux.
    pub fn lagrangian(&self, mu: &[f64], m: &EdgeField) -> Result<f64> {
        self.check_dims(mu)?;
        if let Some(v) = mu.iter().find(|v| **v < 0.0) {
            return Err(Error::NegativeInput { what: "lagrangian", value: *v });
        }
        Ok(self.lagrangian_raw(mu, m))
    }

    pub(crate) fn lagrangian_raw(&self, mu: &[f64], m: &EdgeField) -> f64 {
        let f = self.fam();
        let mut total = 0.0;
        for e in self.graph.edges() {
            let th = theta_unchecked(mu[e.i], mu[e.j]);
            let b = m.get(e.i, e.j);
            if th > 0.0 {
                total += th * f.l(b / th);
            } else if b != 0.0 {
                return f64::INFINITY;
            }
        }
        total
    }

    pub fn dp_hamiltonian(&self, mu: &[f64], p: &EdgeField) -> Result<EdgeField> {
        self.check_dims(mu)?;
        let f = self.fam();
        Ok(EdgeField::from_edges(&self.graph, |_, e| {
            theta_unchecked(mu[e.i], mu[e.j]) * f.h1(p.get(e.i, e.j))
        }))
    }

    pub fn dmu_hamiltonian(&self, mu: &[f64], p: &EdgeField) -> Result<Vec<f64>> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        Ok(self.dmu_hamiltonian_raw(mu, p))
    }

    pub(crate) fn dmu_hamiltonian_raw(&self, mu: &[f64], p: &EdgeField) -> Vec<f64> {
        let f = self.fam();
        let mut out = vec![0.0; mu.len()];
        for e in self.graph.edges() {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            let pij = p.get(e.i, e.j);
            out[e.i] += jet.d1 * f.h(pij);
            out[e.j] += jet.d2 * f.h(-pij);
        }
        out
    }

    pub fn dm_lagrangian(&self, mu: &[f64], m: &EdgeField) -> Result<EdgeField> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        Ok(self.dm_lagrangian_raw(mu, m))
    }

    pub(crate) fn dm_lagrangian_raw(&self, mu: &[f64], m: &EdgeField) -> EdgeField {
        let f = self.fam();
        EdgeField::from_edges(&self.graph, |_, e| {
            f.l1(m.get(e.i, e.j) / theta_unchecked(mu[e.i], mu[e.j]))
        })
    }

    pub fn dmu_lagrangian(&self, mu: &[f64], m: &EdgeField) -> Result<Vec<f64>> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        Ok(self.dmu_lagrangian_raw(mu, m))
    }

    pub(crate) fn dmu_lagrangian_raw(&self, mu: &[f64], m: &EdgeField) -> Vec<f64> {
        let f = self.fam();
        let mut out = vec![0.0; mu.len()];
        for e in self.graph.edges() {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            let w = m.get(e.i, e.j) / jet.value;
            let k = f.l(w) - w * f.l1(w);
            out[e.i] += jet.d1 * k;
            out[e.j] += jet.d2 * k;
        }
        out
    }

    /// `Lbar(mu, w) = L(mu, theta * w)`.
    pub fn bar_lagrangian(&self, mu: &[f64], w: &EdgeField) -> Result<f64> {
        self.check_dims(mu)?;
        let f = self.fam();
        Ok(self
            .graph
            .edges()
            .iter()
            .map(|e| theta_unchecked(mu[e.i], mu[e.j]) * 0.5 * (f.l(w.get(e.i, e.j)) + f.l(w.get(e.j, e.i))))
            .sum())
    }

    pub fn dmu_bar_lagrangian(&self, mu: &[f64], w: &EdgeField) -> Result<Vec<f64>> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        Ok(self.dmu_bar_lagrangian_raw(mu, w))
    }

    pub(crate) fn dmu_bar_lagrangian_raw(&self, mu: &[f64], w: &EdgeField) -> Vec<f64> {
        let f = self.fam();
        let mut out = vec![0.0; mu.len()];
        for e in self.graph.edges() {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            let k = 0.5 * (f.l(w.get(e.i, e.j)) + f.l(w.get(e.j, e.i)));
            out[e.i] += jet.d1 * k;
            out[e.j] += jet.d2 * k;
        }
        out
    }

    /// Running cost `L(mu, w) = D_mu Lbar(mu, w) - D_mu F(mu)`.
    pub fn running_cost(&self, mu: &[f64], w: &EdgeField) -> Result<Vec<f64>> {
        let mut out = self.dmu_bar_lagrangian(mu, w)?;
        for (o, d) in out.iter_mut().zip(self.dcoupling(mu)) {
            *o -= d;
        }
        Ok(out)
    }

    pub(crate) fn running_cost_raw(&self, mu: &[f64], w: &EdgeField) -> Vec<f64> {
        let mut out = self.dmu_bar_lagrangian_raw(mu, w);
        for (o, m) in out.iter_mut().zip(mu) {
            *o += self.model.c_f * m;
        }
        out
    }

    /// `F(mu) = -(cF/2)|mu|^2`.
    pub fn coupling(&self, mu: &[f64]) -> f64 {
        -0.5 * self.model.c_f * dot(mu, mu)
    }

    pub fn dcoupling(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().map(|m| -self.model.c_f * m).collect()
    }

    /// `U_T(mu) = (cT/2)|mu|^2`.
    pub fn terminal_cost(&self, mu: &[f64]) -> f64 {
        0.5 * self.model.c_t * dot(mu, mu)
    }

    pub fn dterminal_cost(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().map(|m| self.model.c_t * m).collect()
    }

    /// Momentum `p = l'(vbar)` with `Lbar(mu, vbar) + H(mu, p) = (vbar, p)_mu`.
    pub fn unique_momentum(&self, mu: &[f64], vbar: &EdgeField) -> Result<EdgeField> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        let f = self.fam();
        let p = EdgeField::from_edges(&self.graph, |_, e| f.l1(vbar.get(e.i, e.j)));
        let lhs = self.bar_lagrangian(mu, vbar)? + self.hamiltonian(mu, &p)?;
        let rhs = crate::calculus::rho_inner(&self.graph, mu, vbar, &p);
        if (lhs - rhs).abs() > 1e-10 * (1.0 + rhs.abs()) {
            return Err(Error::InvalidArgument(format!(
                "Fenchel-Young equality fails for the recovered momentum: {lhs} vs {rhs}"
            )));
        }
        Ok(p)
    }

    /// The objective of the variational formula for `D_{mu^i} H` evaluated at control `w`:
    /// `sum_l (w + grad log mu)^{il} p^{il} d1theta(mu^i, mu^l) - D_{mu^i} Lbar(mu, w + grad log mu)`.
    pub fn dmu_h_variational(&self, i: usize, mu: &[f64], p: &EdgeField, w: &EdgeField) -> Result<f64> {
        self.check_dims(mu)?;
        check_interior(mu)?;
        if i >= mu.len() {
            return Err(Error::InvalidArgument(format!("vertex {} out of range", i + 1)));
        }
        let logmu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
        let glog = crate::calculus::grad_unchecked(&self.graph, &logmu);
        let vbar = w.add(&glog);
        let mut s = 0.0;
        for &l in self.graph.neighbors(i) {
            let d1 = theta_jet_unchecked(mu[i], mu[l]).d1;
            s += vbar.get(i, l) * p.get(i, l) * d1;
        }
        Ok(s - self.dmu_bar_lagrangian_raw(mu, &vbar)[i])
    }
}

/// The maps `(H, B, g)` of an extended forward-backward system and their derivatives.
///
/// Methods assume `mu` is strictly positive; callers own that check.
pub trait MfgSystem: Sync {
    fn graph(&self) -> &WeightedGraph;
    fn horizon(&self) -> f64;
    fn h_map(&self, mu: &[f64], p: &EdgeField) -> Vec<f64>;
    fn b_map(&self, mu: &[f64], p: &EdgeField) -> EdgeField;
    fn g_map(&self, mu: &[f64]) -> Vec<f64>;
    fn dg(&self, mu: &[f64], eta: &[f64]) -> Vec<f64>;
    fn dh_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> Vec<f64>;
    fn dh_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> Vec<f64>;
    fn db_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> EdgeField;
    fn db_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> EdgeField;
    /// Structural constant `C1` of the coercivity, lower-bound and terminal assumptions.
    fn structural_c1(&self) -> f64;
}

impl MfgSystem for GameSpec {
    fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `H(mu, p) = D_mu H(mu, -p) + D_mu F(mu)`.
    fn h_map(&self, mu: &[f64], p: &EdgeField) -> Vec<f64> {
        let mut out = self.dmu_hamiltonian_raw(mu, &p.scale(-1.0));
        for (o, m) in out.iter_mut().zip(mu) {
            *o -= self.model.c_f * m;
        }
        out
    }

    /// `B(mu, p) = -D_p H(mu, -p)`.
    fn b_map(&self, mu: &[f64], p: &EdgeField) -> EdgeField {
        let f = self.fam();
        EdgeField::from_edges(&self.graph, |_, e| {
            -theta_unchecked(mu[e.i], mu[e.j]) * f.h1(-p.get(e.i, e.j))
        })
    }

    fn g_map(&self, mu: &[f64]) -> Vec<f64> {
        self.dterminal_cost(mu)
    }

    fn dg(&self, _mu: &[f64], eta: &[f64]) -> Vec<f64> {
        eta.iter().map(|e| self.model.c_t * e).collect()
    }

    fn dh_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> Vec<f64> {
        let f = self.fam();
        let mut out: Vec<f64> = eta.iter().map(|e| -self.model.c_f * e).collect();
        for e in self.graph.edges() {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            let pij = p.get(e.i, e.j);
            out[e.i] += (jet.d11 * eta[e.i] + jet.d12 * eta[e.j]) * f.h(-pij);
            out[e.j] += (jet.d12 * eta[e.i] + jet.d22 * eta[e.j]) * f.h(pij);
        }
        out
    }

    fn dh_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> Vec<f64> {
        let f = self.fam();
        let mut out = vec![0.0; mu.len()];
        for e in self.graph.edges() {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            let pij = p.get(e.i, e.j);
            let qij = q.get(e.i, e.j);
            out[e.i] -= jet.d1 * f.h1(-pij) * qij;
            out[e.j] += jet.d2 * f.h1(pij) * qij;
        }
        out
    }

    fn db_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> EdgeField {
        let f = self.fam();
        EdgeField::from_edges(&self.graph, |_, e| {
            let jet = theta_jet_unchecked(mu[e.i], mu[e.j]);
            -(jet.d1 * eta[e.i] + jet.d2 * eta[e.j]) * f.h1(-p.get(e.i, e.j))
        })
    }

    fn db_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> EdgeField {
        let f = self.fam();
        EdgeField::from_edges(&self.graph, |_, e| {
            theta_unchecked(mu[e.i], mu[e.j]) * f.h2(-p.get(e.i, e.j)) * q.get(e.i, e.j)
        })
    }

    fn structural_c1(&self) -> f64 {
        self.model.c_f.max(self.model.c_t)
    }
}

/// Extended instance whose flux is not derived from the Hamiltonian:
/// `B_ext(mu, p) = B(mu, p) (1 + beta |mu|^2)` with `H` and `g` unchanged.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub base: GameSpec,
    pub beta: f64,
}

impl ExtendedSystem {
    pub fn new(base: GameSpec, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
        }
        Ok(Self { base, beta })
    }

    fn factor(&self, mu: &[f64]) -> f64 {
        1.0 + self.beta * dot(mu, mu)
    }
}

impl MfgSystem for ExtendedSystem {
    fn graph(&self) -> &WeightedGraph {
        &self.base.graph
    }

    fn horizon(&self) -> f64 {
        self.base.horizon
    }

    fn h_map(&self, mu: &[f64], p: &EdgeField) -> Vec<f64> {
        self.base.h_map(mu, p)
    }

    fn b_map(&self, mu: &[f64], p: &EdgeField) -> EdgeField {
        self.base.b_map(mu, p).scale(self.factor(mu))
    }

    fn g_map(&self, mu: &[f64]) -> Vec<f64> {
        self.base.g_map(mu)
    }

    fn dg(&self, mu: &[f64], eta: &[f64]) -> Vec<f64> {
        self.base.dg(mu, eta)
    }

    fn dh_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> Vec<f64> {
        self.base.dh_mu(mu, p, eta)
    }

    fn dh_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> Vec<f64> {
        self.base.dh_p(mu, p, q)
    }

    fn db_mu(&self, mu: &[f64], p: &EdgeField, eta: &[f64]) -> EdgeField {
        let ds = 2.0 * self.beta * dot(mu, eta);
        self.base
            .db_mu(mu, p, eta)
            .scale(self.factor(mu))
            .add(&self.base.b_map(mu, p).scale(ds))
    }

    fn db_p(&self, mu: &[f64], p: &EdgeField, q: &EdgeField) -> EdgeField {
        self.base.db_p(mu, p, q).scale(self.factor(mu))
    }

    fn structural_c1(&self) -> f64 {
        self.base.structural_c1()
    }
}
