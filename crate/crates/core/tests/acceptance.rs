//! Acceptance gate: runs every criterion at its pinned tolerances and runtime budget and
//! prints one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

mod common;

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use common::{baseline, random_field, random_simplex, random_vec, BASELINE_MU};
use graphmfg::calculus::{dot, edge_inner, grad, div, laplacian, SimplexPoint};
use graphmfg::dynamics::{integrate_continuity, interiority_report, AdversarialFlux, MomentumFlux, ZeroFlux};
use graphmfg::hjb::{
    convexity_probe, gradient_identity_check, hjb_residual, iota_bounds, semiconcavity_probe, value_by_direct_min,
    value_by_fb, DirectOptions,
};
use graphmfg::master::{master_residual, trajectory_consistency};
use graphmfg::nash::{cost_mc, monotone_increasing, nash_certificate, player_costs, rate_matrix, torus_sweep, Control, NashOptions};
use graphmfg::solver::{
    dmu_value_fd, dmu_value_shooting, flow_property_check, lasry_lions_probe, linearized_solve, mobility_identity_gap,
    residuals, solve, uniqueness_gap, SolverOptions,
};
use graphmfg::theta::theta_jet;
use graphmfg::{EdgeField, ExtendedSystem, Family, GameSpec, ModelSpec, WeightedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), graphmfg::Error>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget_s: f64,
    run: fn() -> Outcome,
}

/// Random connected graph: a spanning path plus random chords, weights in `[0.1, 10]`.
fn random_graph(rng: &mut ChaCha8Rng) -> WeightedGraph {
    let n = rng.random_range(2..10);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random::<f64>() < 0.3 {
                edges.push((i, j, 0.1 + 9.9 * rng.random::<f64>()));
            }
        }
    }
    WeightedGraph::new(n, &edges).expect("connected by construction")
}

fn calculus_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ibp, mut euler, mut exchange, mut lap) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let g = random_graph(&mut rng);
        let n = g.n();
        let u = random_vec(&mut rng, n);
        let m = random_field(&g, &mut rng, 1.0);
        let lhs = edge_inner(&g, &grad(&g, &u)?, &m);
        let rhs = -dot(&u, &div(&g, &m)?);
        let scale = 1.0 + lhs.abs() + g.omega_max().sqrt() * g.edges().len() as f64;
        ibp = ibp.max((lhs - rhs).abs() / scale);

        let dg = div(&g, &grad(&g, &u)?)?;
        let l = laplacian(&g, &u)?;
        let lscale = 1.0 + g.max_weighted_degree();
        lap = lap.max(dg.iter().zip(&l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / lscale);

        let r = (12.0 * (rng.random::<f64>() - 0.5)).exp();
        let s = (12.0 * (rng.random::<f64>() - 0.5)).exp();
        let a = theta_jet(r, s)?;
        let b = theta_jet(s, r)?;
        euler = euler.max((r * a.d1 + s * a.d2 - a.value).abs() / a.value);
        exchange = exchange.max((a.d1 - b.d2).abs() / a.d1.abs().max(1e-300));
    }
    let pass = ibp <= 1e-12 && euler <= 1e-12 && exchange <= 1e-12 && lap <= 1e-10;
    Ok((pass, format!("ibp {ibp:.1e} euler {euler:.1e} exchange {exchange:.1e} div-grad {lap:.1e}")))
}

fn duality_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut fy, mut dual, mut mobility) = (0.0_f64, 0.0_f64, 0.0_f64);
    let families = [Family::Quadratic, Family::Power { p0: 1.5 }, Family::Power { p0: 3.0 }];
    for k in 0..1000 {
        let family = families[k % 3];
        let g = random_graph(&mut rng);
        let n = g.n();
        let spec = GameSpec::new(g, ModelSpec { family, c_f: 1.0, c_t: 1.0 }, 1.0)?;
        let mu = random_simplex(&mut rng, n, 6.0);
        let p = random_field(&spec.graph, &mut rng, 2.0);
        let m = spec.dp_hamiltonian(&mu, &p)?;
        let l = spec.lagrangian(&mu, &m)?;
        let h = spec.hamiltonian(&mu, &p)?;
        fy = fy.max((l + h - edge_inner(&spec.graph, &m, &p)).abs() / (1.0 + l.abs() + h.abs()));
        let dl = spec.dmu_lagrangian(&mu, &m)?;
        let dh = spec.dmu_hamiltonian(&mu, &p)?;
        for (a, b) in dl.iter().zip(&dh) {
            dual = dual.max((a + b).abs() / (1.0 + b.abs()));
        }
        if family == Family::Quadratic {
            mobility = mobility.max(mobility_identity_gap(&spec, &mu, &p));
        }
    }
    let pass = fy <= 1e-10 && dual <= 1e-8 && mobility <= 1e-10;
    Ok((pass, format!("fenchel-young {fy:.1e} dmu-duality {dual:.1e} mobility {mobility:.1e}")))
}

fn continuity_equation() -> Outcome {
    let k2 = WeightedGraph::complete(2)?;
    let traj = integrate_continuity(&k2, &ZeroFlux, &SimplexPoint::new(vec![0.9, 0.1])?, (0.0, 1.0), None)?;
    let closed = (traj.path.last()[0] - (0.5 + 0.4 * (-2.0f64).exp())).abs();

    let g = WeightedGraph::cycle(5)?;
    let momentum = |s: f64| EdgeField::from_edges(&g, |k, _| 1.5 * (1.0 + 0.7 * k as f64 + 3.0 * s).sin());
    let flux = MomentumFlux { graph: g.clone(), momentum, bound: 1.5 };
    let mu0 = SimplexPoint::new(vec![0.3, 0.25, 0.2, 0.15, 0.1])?;
    let mut drift = 0.0_f64;
    for v in &integrate_continuity(&g, &flux, &mu0, (0.0, 2.0), None)?.path.values {
        drift = drift.max((v.iter().sum::<f64>() - 1.0).abs());
    }
    let run = |dt: f64| integrate_continuity(&g, &flux, &mu0, (0.0, 1.0), Some(dt)).map(|t| t.path.last().to_vec());
    let reference = run(0.025)?;
    let err = |v: Vec<f64>| v.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let factor = err(run(0.1)?) / err(run(0.05)?);

    let configs: [(WeightedGraph, usize, f64); 5] = [
        (WeightedGraph::cycle(6)?, 0, 2.0),
        (WeightedGraph::path(5)?, 0, 3.0),
        (WeightedGraph::complete(4)?, 2, 5.0),
        (WeightedGraph::torus(&[3, 3], 1.0)?, 4, 2.0),
        (WeightedGraph::new(4, &[(0, 1, 0.2), (1, 2, 3.0), (2, 3, 1.0)])?, 3, 4.0),
    ];
    let mut envelopes = 0;
    let mut worst_r = 0.0_f64;
    let mut min_c = f64::INFINITY;
    for (g, drained, magnitude) in configs {
        let n = g.n();
        let eps = 0.01;
        let mut mu = vec![(1.0 - eps) / (n - 1) as f64; n];
        mu[drained] = eps;
        let adv = AdversarialFlux::new(g.clone(), drained, magnitude)?;
        let traj = integrate_continuity(&g, &adv, &SimplexPoint::new(mu)?, (0.0, 2.0), None)?;
        for v in &traj.path.values {
            drift = drift.max((v.iter().sum::<f64>() - 1.0).abs());
        }
        let report = interiority_report(&traj, eps);
        if report.bound_holds && report.fitted_r.is_finite() && report.fitted_c > 0.0 {
            envelopes += 1;
        }
        worst_r = worst_r.max(report.fitted_r);
        min_c = min_c.min(report.fitted_c);
    }
    let pass = closed <= 1e-8 && drift <= 1e-10 && factor >= 12.0 && envelopes == 5;
    Ok((
        pass,
        format!(
            "k2 {closed:.1e} drift {drift:.1e} rk4-factor {factor:.2} envelopes {envelopes}/5 (max r {worst_r:.3}, min c {min_c:.3})"
        ),
    ))
}

fn mfg_solver() -> Outcome {
    let spec = baseline();
    let opts = SolverOptions::default();
    let sol = solve(&spec, 0.0, &BASELINE_MU, &opts)?;
    let res = residuals(&spec, &sol, &BASELINE_MU).max();
    let ext = ExtendedSystem::new(spec.clone(), 0.1)?;
    let ext_sol = solve(&ext, 0.0, &BASELINE_MU, &opts)?;
    let ext_res = residuals(&ext, &ext_sol, &BASELINE_MU).max();
    let (_, cond) = dmu_value_shooting(&spec, &sol)?;
    let tight = opts.with_tol(1e-12);
    let unique = uniqueness_gap(&spec, 0.0, &BASELINE_MU, &tight, 11)?;
    let flow = flow_property_check(&spec, 0.0, 0.5, &BASELINE_MU, &tight)?;
    let ll = lasry_lions_probe(&spec, &sol);
    let pass = res <= 1e-6 && ext_res <= 1e-6 && unique <= 1e-6 && flow <= 1e-6 && ll <= 0.0;
    Ok((
        pass,
        format!(
            "residual {res:.1e} extended {ext_res:.1e} uniqueness {unique:.1e} flow {flow:.1e} lasry-lions {ll:.3} shooting cond {cond:.2}"
        ),
    ))
}

fn linearization() -> Outcome {
    let spec = baseline();
    let opts = SolverOptions::default().with_tol(1e-14);
    let base = solve(&spec, 0.0, &BASELINE_MU, &opts)?;
    let (shoot, _) = dmu_value_shooting(&spec, &base)?;
    let mut errs = Vec::new();
    for h in [1e-3, 1e-4] {
        let (fd, _) = dmu_value_fd(&spec, 0.0, &BASELINE_MU, h, &opts, Some(&base))?;
        let mut e = 0.0_f64;
        for (a, b) in fd.iter().flatten().zip(shoot.iter().flatten()) {
            e = e.max((a - b).abs());
        }
        errs.push(e);
    }
    let order = (errs[0] / errs[1]).log10();
    let zero = linearized_solve(&spec, &base, &[0.0; 4])?;
    let zero_max = zero.psi.values.iter().chain(&zero.eta.values).flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pass = order >= 1.8 && zero_max == 0.0;
    Ok((pass, format!("fd errors {:.1e} {:.1e} order {order:.2} zero-direction {zero_max:.1e}", errs[0], errs[1])))
}

fn master_equation() -> Outcome {
    let spec = baseline();
    let opts = SolverOptions::default().with_tol(1e-13);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0_f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..10 {
        let t = 0.1 + 0.08 * k as f64;
        let mu = if k == 0 { BASELINE_MU.to_vec() } else { random_simplex(&mut rng, 4, 2.0) };
        let norms = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&h| master_residual(&spec, t, &mu, h, &opts).map(|r| r.norm))
            .collect::<Result<Vec<f64>, _>>()?;
        worst = worst.max(norms.iter().copied().fold(0.0, f64::max));
        for w in norms.windows(2) {
            let order = (w[0] / w[1]).log2();
            lo = lo.min(order);
            hi = hi.max(order);
        }
    }
    let consistency = trajectory_consistency(&spec, 0.0, &BASELINE_MU, 10, &opts.with_steps(200))?;
    let pass = worst < 1e-4 && lo >= 1.5 && hi <= 2.5 && consistency <= 1e-6;
    Ok((pass, format!("max residual {worst:.1e} log2 ratios [{lo:.2}, {hi:.2}] consistency {consistency:.1e}")))
}

fn hjb_suite() -> Outcome {
    let spec = baseline();
    let opts = SolverOptions::default().with_tol(1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut points: Vec<(f64, Vec<f64>)> = vec![(0.0, BASELINE_MU.to_vec()), (0.5, BASELINE_MU.to_vec())];
    for t in [0.0, 0.25, 0.7] {
        points.push((t, random_simplex(&mut rng, 4, 2.0)));
    }
    let (lo, hi) = iota_bounds(&spec);
    let mut dual = 0.0_f64;
    let mut hjb = 0.0_f64;
    let mut iota_ok = true;
    for (t, mu) in &points {
        let fb = value_by_fb(&spec, *t, mu, &opts)?;
        let direct = value_by_direct_min(&spec, *t, mu, &DirectOptions::default())?;
        dual = dual.max((direct.value - fb.value).abs() / (1.0 + fb.value.abs()));
        iota_ok &= lo <= fb.value && fb.value <= hi && lo <= direct.value && direct.value <= hi;
        hjb = hjb.max(hjb_residual(&spec, *t, mu, 1e-3, &opts.with_tol(1e-13))?.residual.abs());
    }
    let gi = gradient_identity_check(&spec, 0.0, &BASELINE_MU, 1e-4, 3, &opts.with_tol(1e-13))?;
    let conv = convexity_probe(&spec, 0.0, 20, 7, &opts)?;
    let semi = semiconcavity_probe(&spec, 0.0, &BASELINE_MU, 1e-2, 6, 3, &opts.with_tol(1e-13))?;
    let drift = (semi.ratio - semi.ratio_half).abs() / semi.ratio.abs().max(1e-3);
    let stable = semi.ratio.is_finite() && semi.ratio_half.is_finite() && drift <= 0.1;
    let pass = dual <= 1e-4 && gi.max_gap < 1e-4 && hjb < 1e-4 && iota_ok && conv.min_margin > 0.0 && stable;
    Ok((
        pass,
        format!(
            "direct-fb {dual:.1e} gradient {:.1e} hjb {hjb:.1e} iota {} convexity min {:.1e} semiconcavity {:.4}/{:.4}",
            gi.max_gap,
            if iota_ok { "ok" } else { "violated" },
            conv.min_margin,
            semi.ratio,
            semi.ratio_half
        ),
    ))
}

fn nash_suite() -> Outcome {
    let spec = baseline();
    let sol = solve(&spec, 0.0, &BASELINE_MU, &SolverOptions::default().with_tol(1e-12))?;
    let opts = NashOptions::default();
    let report = nash_certificate(&spec, &sol, &opts)?;
    if !report.admissible {
        return Ok((false, format!("NOT-APPLICABLE: {} rate violations", report.violations.len())));
    }
    let eq = report.equality_gap.unwrap_or(f64::INFINITY);
    let dev = report.min_deviation_gap.unwrap_or(f64::NEG_INFINITY);
    let mc = report.mc.as_ref().expect("paths > 0");
    let prop = report.propagator.as_ref().expect("admissible");
    let star = rate_matrix(&spec, &sol, Control::optimal(&spec.graph))?;
    let costs = player_costs(&spec, &sol, &Control::optimal(&spec.graph));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let replay = pool.install(|| cost_mc(&star, &costs, 0, opts.paths, opts.seed))?;
    let deterministic = replay == mc.cost[0];
    let pass = eq <= 1e-5
        && dev >= -1e-8
        && mc.max_cost_z <= 3.0
        && prop.row_sum_gap <= 1e-10
        && prop.chapman_kolmogorov_gap <= 1e-8
        && mc.max_martingale_z <= 4.0
        && deterministic;
    let mut detail = String::new();
    let _ = write!(
        detail,
        "equality {eq:.1e} min deviation gap {dev:.1e} ({} deviations, {} skipped) mc z {:.2} martingale z {:.2} rows {:.1e} ck {:.1e} deterministic {}",
        report.deviation_gaps.len(),
        report.skipped_deviations,
        mc.max_cost_z,
        mc.max_martingale_z,
        prop.row_sum_gap,
        prop.chapman_kolmogorov_gap,
        deterministic
    );
    Ok((pass, detail))
}

fn torus() -> Outcome {
    let points = torus_sweep(&[4, 8, 16], ModelSpec::default(), 1.0, &SolverOptions::default())?;
    let margins: Vec<String> = points.iter().map(|p| format!("n={} {:.4}", p.n, p.min_rate)).collect();
    Ok((monotone_increasing(&points), format!("margins {}", margins.join(", "))))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "graph calculus identities", budget_s: 1.0, run: calculus_identities },
        Criterion { id: 2, name: "legendre and duality", budget_s: 2.0, run: duality_suite },
        Criterion { id: 3, name: "continuity equation", budget_s: 10.0, run: continuity_equation },
        Criterion { id: 4, name: "mfg solver", budget_s: 60.0, run: mfg_solver },
        Criterion { id: 5, name: "linearization", budget_s: 30.0, run: linearization },
        Criterion { id: 6, name: "master equation", budget_s: 120.0, run: master_equation },
        Criterion { id: 7, name: "hjb certification", budget_s: 180.0, run: hjb_suite },
        Criterion { id: 8, name: "nash certification", budget_s: 240.0, run: nash_suite },
        Criterion { id: 9, name: "torus admissibility", budget_s: 120.0, run: torus },
    ];
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed < c.budget_s, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} criterion {} {}: {} [{elapsed:.2}s of {:.0}s]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            c.budget_s
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
