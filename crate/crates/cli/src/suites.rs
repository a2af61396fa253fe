//! Suite runners. Each returns its checks, a JSON report and CSV dumps.

use graphmfg::dynamics::{integrate_continuity, interiority_report, AdversarialFlux};
use graphmfg::hjb::{
    convexity_probe, gradient_identity_check, hjb_residual, iota_bounds, semiconcavity_probe, value_by_direct_min,
    value_by_fb, DirectOptions,
};
use graphmfg::master::{master_residual, trajectory_consistency};
use graphmfg::nash::{nash_certificate, rate_matrix, sample_path, Control, NashOptions};
use graphmfg::solver::{
    dmu_value_shooting, flow_property_check, lasry_lions_probe, residuals, solve, uniqueness_gap, SolverOptions,
    MAX_CONDITION,
};
use graphmfg::{ExtendedSystem, GameSpec, MfgSystem, SimplexPoint};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Suite};
use crate::output::{csv_table, fmt_float, path_rows};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    /// One of `<=`, `<`, `>=`, `>`, `in`, `holds`.
    pub op: &'static str,
    pub tolerance: Value,
    pub hard: bool,
    pub passed: bool,
}

impl Check {
    fn cmp(name: String, value: f64, op: &'static str, tol: f64, hard: bool) -> Self {
        let passed = match op {
            "<=" => value <= tol,
            "<" => value < tol,
            ">=" => value >= tol,
            _ => value > tol,
        };
        Self { name, value: Some(value), op, tolerance: json!(tol), hard, passed }
    }

    fn le(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::cmp(name.into(), value, "<=", tol, true)
    }

    fn lt(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::cmp(name.into(), value, "<", tol, true)
    }

    fn ge(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::cmp(name.into(), value, ">=", tol, true)
    }

    fn gt(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::cmp(name.into(), value, ">", tol, true)
    }

    fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        let passed = (lo..=hi).contains(&value);
        Self { name: name.into(), value: Some(value), op: "in", tolerance: json!([lo, hi]), hard: true, passed }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: None, op: "holds", tolerance: Value::Null, hard: true, passed: ok }
    }

    fn soft(mut self) -> Self {
        self.hard = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Skipped,
    Error,
}

pub struct SuiteOutput {
    pub status: Status,
    pub checks: Vec<Check>,
    pub report: Value,
    pub csv: Vec<(String, String)>,
}

impl SuiteOutput {
    fn from_checks(checks: Vec<Check>, report: Value, csv: Vec<(String, String)>) -> Self {
        let ok = checks.iter().all(|c| c.passed || !c.hard);
        Self { status: if ok { Status::Pass } else { Status::Fail }, checks, report, csv }
    }

    fn skipped(reason: &str) -> Self {
        Self { status: Status::Skipped, checks: Vec::new(), report: json!({ "reason": reason }), csv: Vec::new() }
    }
}

pub struct Context {
    pub config: ExperimentConfig,
    pub spec: GameSpec,
    pub extended: Option<ExtendedSystem>,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> graphmfg::Result<Self> {
        let spec = GameSpec::new(config.graph.graph.clone(), config.model, config.horizon)?;
        let extended = if config.beta > 0.0 { Some(ExtendedSystem::new(spec.clone(), config.beta)?) } else { None };
        Ok(Self { config, spec, extended })
    }

    fn system(&self) -> &dyn MfgSystem {
        match &self.extended {
            Some(ext) => ext,
            None => &self.spec,
        }
    }

    fn solver_options(&self) -> SolverOptions {
        let o = &self.config.options;
        let base = SolverOptions::default();
        SolverOptions { steps: o.steps, tol: o.tol.unwrap_or(base.tol), ..base }
    }

    fn n(&self) -> usize {
        self.spec.graph.n()
    }
}

pub fn run(ctx: &Context, suite: Suite) -> SuiteOutput {
    if suite.needs_hamiltonian() && ctx.extended.is_some() {
        return SuiteOutput::skipped("requires beta = 0");
    }
    let result = match suite {
        Suite::Interiority => interiority(ctx),
        Suite::Mfg => mfg(ctx),
        Suite::Master => master(ctx),
        Suite::Hjb => hjb(ctx),
        Suite::Nash => nash(ctx),
        Suite::All => unreachable!("expanded before dispatch"),
    };
    result.unwrap_or_else(|e| SuiteOutput {
        status: Status::Error,
        checks: Vec::new(),
        report: json!({ "error": e.to_string() }),
        csv: Vec::new(),
    })
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn interiority(ctx: &Context) -> graphmfg::Result<SuiteOutput> {
    let g = &ctx.spec.graph;
    let o = &ctx.config.options.interiority;
    let mut checks = Vec::new();
    let mut points = Vec::new();
    let mut csv = Vec::new();
    for (k, p) in ctx.config.points.iter().enumerate() {
        let drained = p.mu.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        let eps = p.mu[drained];
        let flux = AdversarialFlux::new(g.clone(), drained, o.magnitude)?;
        let traj = integrate_continuity(g, &flux, &SimplexPoint::new(p.mu.clone())?, (p.t, ctx.config.horizon), o.dt)?;
        let drift = traj.path.values.iter().map(|v| (v.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        let report = interiority_report(&traj, eps);
        let tag = format!("point {}", k + 1);
        checks.push(Check::le(format!("{tag}: mass drift"), drift, 1e-10));
        checks.push(Check::holds(format!("{tag}: exponential envelope"), report.bound_holds));
        checks.push(Check::gt(format!("{tag}: fitted c"), report.fitted_c, 0.0));
        points.push(json!({
            "t": p.t,
            "mu": p.mu,
            "drained_vertex": drained + 1,
            "eps": eps,
            "mass_drift": drift,
            "halvings": traj.halvings,
            "min_profile": report.min_profile,
            "fitted_c": report.fitted_c,
            "fitted_r": report.fitted_r,
        }));
        let header = std::iter::once("t".to_string()).chain(labels("rho", g.n())).collect();
        csv.push((format!("interiority_trajectory_{}.csv", k + 1), csv_table(header, path_rows(&[&traj.path]))));
    }
    Ok(SuiteOutput::from_checks(checks, json!({ "magnitude": o.magnitude, "points": points }), csv))
}

fn mfg(ctx: &Context) -> graphmfg::Result<SuiteOutput> {
    let sys = ctx.system();
    let opts = ctx.solver_options();
    let o = &ctx.config.options.mfg;
    let probe_opts = opts.with_tol(opts.tol.min(1e-12));
    let seed = ctx.config.options.seed.unwrap_or(0);
    let n = ctx.n();
    let mut checks = Vec::new();
    let mut points = Vec::new();
    let mut csv = Vec::new();
    for (k, p) in ctx.config.points.iter().enumerate() {
        let sol = solve(sys, p.t, &p.mu, &opts)?;
        let res = residuals(sys, &sol, &p.mu);
        let cond = match dmu_value_shooting(sys, &sol) {
            Ok((_, cond)) => cond,
            Err(graphmfg::Error::SingularShooting { cond }) => cond,
            Err(e) => return Err(e),
        };
        let unique = uniqueness_gap(sys, p.t, &p.mu, &probe_opts, seed)?;
        let t1 = 0.5 * (p.t + ctx.config.horizon);
        let flow = flow_property_check(sys, p.t, t1, &p.mu, &probe_opts)?;
        let ll = lasry_lions_probe(sys, &sol);
        let tag = format!("point {}", k + 1);
        checks.push(Check::le(format!("{tag}: residual"), res.max(), o.residual_tol));
        checks.push(Check::le(format!("{tag}: uniqueness gap"), unique, o.probe_tol));
        checks.push(Check::le(format!("{tag}: flow property gap"), flow, o.probe_tol));
        let lasry_lions = Check::le(format!("{tag}: lasry-lions probe"), ll, 0.0);
        checks.push(if ctx.extended.is_some() { lasry_lions.soft() } else { lasry_lions });
        checks.push(Check::le(format!("{tag}: shooting condition number"), cond, MAX_CONDITION).soft());
        points.push(json!({
            "t": p.t,
            "mu": p.mu,
            "steps": sol.grid().steps,
            "iterations": sol.iterations,
            "lambda": sol.lambda,
            "residuals": res,
            "value": sol.value(),
            "min_density": sol.min_density(),
            "shooting_cond": cond,
            "uniqueness_gap": unique,
            "flow_gap": flow,
            "lasry_lions": ll,
        }));
        let header = std::iter::once("s".to_string()).chain(labels("phi", n)).chain(labels("rho", n)).collect();
        csv.push((format!("mfg_solution_{}.csv", k + 1), csv_table(header, path_rows(&[&sol.phi, &sol.rho]))));
    }
    let report = json!({ "beta": ctx.config.beta, "solver": opts, "points": points });
    Ok(SuiteOutput::from_checks(checks, report, csv))
}

fn master(ctx: &Context) -> graphmfg::Result<SuiteOutput> {
    let sys = ctx.system();
    let o = &ctx.config.options.master;
    let opts = ctx.solver_options().with_tol(o.solver_tol);
    let n = ctx.n();
    let mut checks = Vec::new();
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for (k, p) in ctx.config.points.iter().enumerate() {
        let sweep = o
            .time_steps
            .iter()
            .map(|&h| master_residual(sys, p.t, &p.mu, h, &opts))
            .collect::<graphmfg::Result<Vec<_>>>()?;
        let tag = format!("point {}", k + 1);
        let finest = sweep.last().expect("time_steps is nonempty");
        checks.push(Check::lt(format!("{tag}: residual"), finest.norm, o.residual_tol));
        let orders: Vec<f64> = sweep.windows(2).zip(o.time_steps.windows(2)).map(|(r, h)| {
            (r[0].norm / r[1].norm).ln() / (h[0] / h[1]).ln()
        }).collect();
        for (j, order) in orders.iter().enumerate() {
            checks.push(Check::within(format!("{tag}: observed order {}", j + 1), *order, 1.5, 2.5));
        }
        let mut row = vec![finest.t];
        row.extend(&finest.mu);
        row.extend(&finest.residual);
        row.push(finest.norm);
        rows.push(row);
        points.push(json!({
            "t": p.t,
            "mu": p.mu,
            "time_steps": o.time_steps,
            "scheme": finest.scheme,
            "norms": sweep.iter().map(|r| r.norm).collect::<Vec<_>>(),
            "orders": orders,
            "residual": finest.residual,
            "shooting_cond": finest.shooting_cond,
        }));
    }
    let first = &ctx.config.points[0];
    let consistency = trajectory_consistency(sys, first.t, &first.mu, o.consistency_samples, &opts)?;
    checks.push(Check::le("trajectory consistency", consistency, o.consistency_tol));
    let header = std::iter::once("t".to_string())
        .chain(labels("mu", n))
        .chain(labels("residual", n))
        .chain(std::iter::once("norm".to_string()))
        .collect();
    let csv = vec![("master_sweep.csv".to_string(), csv_table(header, rows))];
    let report = json!({ "points": points, "trajectory_consistency": consistency });
    Ok(SuiteOutput::from_checks(checks, report, csv))
}

fn hjb(ctx: &Context) -> graphmfg::Result<SuiteOutput> {
    let spec = &ctx.spec;
    let g = &spec.graph;
    let o = &ctx.config.options.hjb;
    let opts = ctx.solver_options().with_tol(1e-12);
    let fine = opts.with_tol(1e-13);
    let direct_opts = DirectOptions { steps: o.direct_steps, ..Default::default() };
    let seed = ctx.config.options.seed.unwrap_or(0);
    let (lo, hi) = iota_bounds(spec);
    let mut checks = Vec::new();
    let mut points = Vec::new();
    let mut csv = Vec::new();
    for (k, p) in ctx.config.points.iter().enumerate() {
        let fb = value_by_fb(spec, p.t, &p.mu, &opts)?;
        let direct = value_by_direct_min(spec, p.t, &p.mu, &direct_opts)?;
        let dual = (direct.value - fb.value).abs() / (1.0 + fb.value.abs());
        let res = hjb_residual(spec, p.t, &p.mu, o.residual_h, &fine)?;
        let tag = format!("point {}", k + 1);
        checks.push(Check::le(format!("{tag}: direct vs forward-backward"), dual, o.tol));
        checks.push(Check::lt(format!("{tag}: hjb residual"), res.residual.abs(), o.tol));
        let inside = |u: f64| lo <= u && u <= hi;
        checks.push(Check::holds(format!("{tag}: iota bounds"), inside(fb.value) && inside(direct.value)));
        points.push(json!({
            "t": p.t,
            "mu": p.mu,
            "value_fb": fb.value,
            "value_direct": direct.value,
            "relative_gap": dual,
            "direct_iterations": direct.iterations,
            "direct_converged": direct.converged,
            "min_density": direct.min_density,
            "hjb_residual": res,
        }));
        let path = &direct.path;
        let header: Vec<String> = std::iter::once("s".to_string())
            .chain(labels("rho", g.n()))
            .chain(g.edges().iter().map(|e| format!("m_({},{})", e.i + 1, e.j + 1)))
            .collect();
        let rows: Vec<Vec<f64>> = (0..=path.grid.steps)
            .map(|s| {
                let mut row = vec![path.grid.node(s)];
                row.extend(&path.rho[s]);
                match path.flux.get(s) {
                    Some(m) => row.extend(m.edge_values(g)),
                    None => row.extend(std::iter::repeat_n(f64::NAN, g.edges().len())),
                }
                row
            })
            .collect();
        csv.push((format!("hjb_minimizer_{}.csv", k + 1), csv_table(header, rows)));
    }
    let first = &ctx.config.points[0];
    let gi = gradient_identity_check(spec, first.t, &first.mu, o.gradient_h, 3, &fine)?;
    checks.push(Check::lt("gradient identity", gi.max_gap, o.tol));
    let conv = convexity_probe(spec, first.t, o.chords, seed, &opts)?;
    checks.push(Check::gt("convexity margin", conv.min_margin, 0.0));
    let semi = semiconcavity_probe(spec, first.t, &first.mu, o.semiconcavity_h, 6, seed, &fine)?;
    let drift = (semi.ratio - semi.ratio_half).abs() / semi.ratio.abs().max(1e-3);
    checks.push(Check::holds("semiconcavity ratio finite", semi.ratio.is_finite() && semi.ratio_half.is_finite()));
    checks.push(Check::le("semiconcavity ratio drift under halving", drift, 0.1));
    let report = json!({
        "iota_bounds": [lo, hi],
        "points": points,
        "gradient_identity": gi,
        "convexity": conv,
        "semiconcavity": semi,
    });
    Ok(SuiteOutput::from_checks(checks, report, csv))
}

/// Shifts the vertex indices of a serialized report from 0-based to 1-based.
fn one_based(report: &mut Value) {
    if let Some(list) = report.get_mut("violations").and_then(Value::as_array_mut) {
        for v in list {
            for key in ["from", "to"] {
                if let Some(x) = v.get(key).and_then(Value::as_u64) {
                    v[key] = json!(x + 1);
                }
            }
        }
    }
    if let Some(list) = report.get_mut("deviation_gaps").and_then(Value::as_array_mut) {
        for v in list {
            if let Some(x) = v.get("vertex").and_then(Value::as_u64) {
                v["vertex"] = json!(x + 1);
            }
        }
    }
}

fn nash(ctx: &Context) -> graphmfg::Result<SuiteOutput> {
    let spec = &ctx.spec;
    let o = &ctx.config.options.nash;
    let seed = ctx.config.options.seed.expect("validated: nash requires a seed");
    let opts = ctx.solver_options().with_tol(1e-12);
    let nash_opts = NashOptions { paths: o.paths, seed, random_directions: o.random_directions, ..Default::default() };
    let mut checks = Vec::new();
    let mut points = Vec::new();
    let mut csv = Vec::new();
    let mut applicable = false;
    for (k, p) in ctx.config.points.iter().enumerate() {
        let sol = solve(spec, p.t, &p.mu, &opts)?;
        let report = nash_certificate(spec, &sol, &nash_opts)?;
        let tag = format!("point {}", k + 1);
        checks.push(Check::holds(format!("{tag}: feedback admissible"), report.admissible).soft());
        if report.admissible {
            applicable = true;
            checks.push(Check::le(format!("{tag}: equality gap"), report.equality_gap.unwrap_or(f64::NAN), 1e-5));
            if let Some(d) = report.min_deviation_gap {
                checks.push(Check::ge(format!("{tag}: min deviation gap"), d, -1e-8));
            }
            if let Some(mc) = &report.mc {
                checks.push(Check::le(format!("{tag}: ode vs mc (standard errors)"), mc.max_cost_z, 3.0));
                checks.push(Check::le(format!("{tag}: martingale (standard errors)"), mc.max_martingale_z, 4.0));
            }
            if let Some(prop) = &report.propagator {
                checks.push(Check::le(format!("{tag}: row stochasticity"), prop.row_sum_gap, 1e-10));
                checks.push(Check::le(format!("{tag}: chapman-kolmogorov"), prop.chapman_kolmogorov_gap, 1e-8));
            }
            if o.dump_paths > 0 {
                let star = rate_matrix(spec, &sol, Control::optimal(&spec.graph))?;
                for idx in 0..o.dump_paths {
                    let start = idx % ctx.n();
                    let sample = sample_path(&star, start, seed, idx as u64)?;
                    let mut text = format!("t_jump,vertex\n{},{}\n", fmt_float(p.t), start + 1);
                    for &(s, _, to) in &sample.jumps {
                        text.push_str(&format!("{},{}\n", fmt_float(s), to + 1));
                    }
                    csv.push((format!("nash_path_{}_{}.csv", k + 1, idx + 1), text));
                }
            }
        }
        let mut value = serde_json::to_value(&report).expect("report serializes");
        one_based(&mut value);
        value["t"] = json!(p.t);
        value["mu"] = json!(p.mu);
        value["status"] = json!(if report.admissible { "certified" } else { "NOT-APPLICABLE" });
        points.push(value);
    }
    let report = json!({ "options": nash_opts, "points": points });
    let mut out = SuiteOutput::from_checks(checks, report, csv);
    if !applicable {
        out.status = Status::NotApplicable;
    }
    Ok(out)
}
