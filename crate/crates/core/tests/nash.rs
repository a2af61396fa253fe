mod common;

use common::{baseline, BASELINE_MU};
use graphmfg::grid::TimeGrid;
use graphmfg::nash::{
    consistency_check, cost_mc, cost_ode, martingale_probe, monotone_increasing, nash_certificate, optimal_control,
    player_costs, propagator_check, rate_matrix, sample_path, torus_profile, torus_sweep, Control, CostModel,
    NashOptions, RateMatrixPath,
};
use graphmfg::solver::{solve, SolverOptions};
use graphmfg::theta::theta_d1;
use graphmfg::{GameSpec, ModelSpec, WeightedGraph};
use nalgebra::{DMatrix, DVector};

fn heat_chain() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])
}

#[test]
fn constant_generator_propagator_is_the_matrix_exponential() {
    let q0 = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.5, 0.0, 0.3, 1.5, 0.2, 0.0]);
    let grid = TimeGrid::new(0.0, 1.5, 150).unwrap();
    let q = RateMatrixPath::from_fn(grid, move |_| q0.clone()).unwrap();
    let mut gen = q.node(0).clone();
    assert!((gen.row(0).sum()).abs() < 1e-15 && gen[(0, 0)] == -3.0);
    gen *= 1.5;
    let exact = gen.exp();
    let psi = q.propagator(0, 150).unwrap();
    assert!((&psi - &exact).abs().max() < 1e-9, "{}", (&psi - &exact).abs().max());
    let split = q.propagator(0, 60).unwrap() * q.propagator(60, 150).unwrap();
    assert!((&psi - split).abs().max() < 1e-13);
    assert!(q.propagator(5, 4).is_err());
    assert!(q.propagator(0, 151).is_err());
}

#[test]
fn frozen_chain_has_trivial_dynamics() {
    let grid = TimeGrid::new(0.0, 2.0, 40).unwrap();
    let q = RateMatrixPath::from_fn(grid, |_| DMatrix::zeros(3, 3)).unwrap();
    assert_eq!(q.propagator(0, 40).unwrap(), DMatrix::identity(3, 3));
    let path = sample_path(&q, 1, 9, 0).unwrap();
    assert!(path.jumps.is_empty() && path.end() == 1);
    // Running cost s * (x + 1) integrates to 2 (x + 1) on [0, 2].
    let cost = CostModel::from_fn(grid, |s| vec![s, 2.0 * s, 3.0 * s], vec![0.5, 0.25, 0.0]);
    let z = cost_ode(&q, &cost).unwrap();
    assert!((z[0] - 2.5).abs() < 1e-13 && (z[1] - 4.25).abs() < 1e-13 && (z[2] - 6.0).abs() < 1e-13);
    let mc = cost_mc(&q, &cost, 1, 10, 3).unwrap();
    assert!((mc.mean - 4.25).abs() < 1e-13 && mc.std_error == 0.0);
    assert_eq!(mc.z_score(4.25 + 1e-14) > 0.0, true);
}

#[test]
fn constant_terminal_cost_without_running_cost() {
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let q = RateMatrixPath::from_fn(grid, |s| DMatrix::from_row_slice(2, 2, &[0.0, 1.0 + s, 2.0, 0.0])).unwrap();
    let cost = CostModel::from_fn(grid, |_| vec![0.0, 0.0], vec![3.0, 3.0]);
    let z = cost_ode(&q, &cost).unwrap();
    assert!(z.iter().all(|v| (v - 3.0).abs() < 1e-14));
    let mc = cost_mc(&q, &cost, 0, 100, 1).unwrap();
    assert_eq!(mc.mean, 3.0);
}

#[test]
fn heat_chain_expectation_and_monte_carlo() {
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let q = RateMatrixPath::from_fn(grid, |_| heat_chain()).unwrap();
    let cost = CostModel::from_fn(grid, |_| vec![0.0, 0.0], vec![1.0, 0.0]);
    let exact = 0.5 * (1.0 + (-2.0f64).exp());
    let z = cost_ode(&q, &cost).unwrap();
    assert!((z[0] - exact).abs() < 1e-9, "{}", z[0] - exact);
    let small = cost_mc(&q, &cost, 0, 1_000, 17).unwrap();
    let mid = cost_mc(&q, &cost, 0, 10_000, 17).unwrap();
    let large = cost_mc(&q, &cost, 0, 100_000, 17).unwrap();
    assert!(large.z_score(exact) < 4.0, "{large:?}");
    for (a, b) in [(small, mid), (mid, large)] {
        let ratio = a.std_error / b.std_error;
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "stderr ratio {ratio}");
    }
    // Law of the chain from (0.9, 0.1) relaxes like the two-point heat flow.
    let laws = q.laws(&[0.9, 0.1]).unwrap();
    assert!((laws[100][0] - (0.5 + 0.4 * (-2.0f64).exp())).abs() < 1e-9);
}

#[test]
fn monte_carlo_is_deterministic_per_seed() {
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let q = RateMatrixPath::from_fn(grid, |s| DMatrix::from_row_slice(2, 2, &[0.0, 1.0 + s, 2.0 - s, 0.0])).unwrap();
    let cost = CostModel::from_fn(grid, |s| vec![s, 1.0 - s], vec![1.0, -1.0]);
    let a = cost_mc(&q, &cost, 0, 5_000, 42).unwrap();
    let b = cost_mc(&q, &cost, 0, 5_000, 42).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| cost_mc(&q, &cost, 0, 5_000, 42).unwrap());
    assert_eq!(a, c);
    let d = cost_mc(&q, &cost, 0, 5_000, 43).unwrap();
    assert_ne!(a.mean, d.mean);
    assert_eq!(sample_path(&q, 0, 42, 7).unwrap(), sample_path(&q, 0, 42, 7).unwrap());
    assert_ne!(sample_path(&q, 0, 42, 7).unwrap(), sample_path(&q, 0, 42, 8).unwrap());
}

#[test]
fn martingale_term_has_zero_mean() {
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let q = RateMatrixPath::from_fn(grid, |s| {
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0 + s, 0.5, 2.0, 0.0, 1.0 - 0.5 * s, 0.3, 0.7, 0.0])
    })
    .unwrap();
    let f = |s: f64| vec![(s + 1.0).sin(), 2.0 * s, (3.0 * s).cos()];
    let est = martingale_probe(&q, &f, 2, 20_000, 5).unwrap();
    assert!(est.z_score(0.0) < 4.0, "{est:?}");
    assert!(est.std_error > 0.0);
}

#[test]
fn argument_errors() {
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let q = RateMatrixPath::from_fn(grid, |_| heat_chain()).unwrap();
    assert!(sample_path(&q, 2, 0, 0).is_err());
    let bad = CostModel::from_fn(grid, |_| vec![0.0; 3], vec![0.0; 3]);
    assert!(cost_ode(&q, &bad).is_err());
    let short = CostModel { running: vec![vec![0.0; 2]; 3], terminal: vec![0.0; 2] };
    assert!(cost_mc(&q, &short, 0, 10, 0).is_err());
    let good = CostModel::from_fn(grid, |_| vec![0.0; 2], vec![0.0; 2]);
    assert!(cost_mc(&q, &good, 0, 1, 0).is_err());
    assert!(q.laws(&[1.0]).is_err());
    let g = WeightedGraph::cycle(4).unwrap();
    assert!(Control::deviation(&g, 4, &[0.0; 3]).is_err());
    assert!(Control::deviation(&g, 0, &[0.0; 4]).is_err());
    assert!(RateMatrixPath::from_fn(grid, |s| DMatrix::zeros(if s < 0.5 { 2 } else { 3 }, 2)).is_err());
}

#[test]
fn uniform_population_plays_the_heat_chain() {
    let spec = GameSpec::new(WeightedGraph::cycle_weighted(5, 2.0).unwrap(), ModelSpec::default(), 1.0).unwrap();
    let (sol, adm) = optimal_control(&spec, &[0.2; 5], &SolverOptions::default()).unwrap();
    assert!(adm.admissible);
    assert!((adm.min_rate - 2.0).abs() < 1e-10);
    let q = rate_matrix(&spec, &sol, Control::optimal(&spec.graph)).unwrap();
    for k in [0, 50, 200] {
        let m = q.node(k);
        for e in spec.graph.edges() {
            assert!((m[(e.i, e.j)] - 2.0).abs() < 1e-10 && (m[(e.j, e.i)] - 2.0).abs() < 1e-10);
        }
        assert!((m[(0, 0)] + 4.0).abs() < 1e-10);
    }
}

#[test]
fn equilibrium_rates_follow_the_feedback_formula() {
    let spec = baseline();
    let sol = solve(&spec, 0.0, &BASELINE_MU, &SolverOptions::default().with_tol(1e-12)).unwrap();
    let q = rate_matrix(&spec, &sol, Control::optimal(&spec.graph)).unwrap();
    let k = 37;
    let (rho, phi) = (&sol.rho.values[k], &sol.phi.values[k]);
    for e in spec.graph.edges() {
        for (i, j) in [(e.i, e.j), (e.j, e.i)] {
            // Quadratic family: h'(-grad phi)^{ij} = phi^j - phi^i on unit weights.
            let expect = 1.0 - theta_d1(rho[i], rho[j]).unwrap() * (phi[j] - phi[i]);
            assert!((q.node(k)[(i, j)] - expect).abs() < 1e-13);
        }
    }
    let dev = Control::deviation(&spec.graph, 0, &[0.0; 3]).unwrap();
    assert_eq!(dev, Control::optimal(&spec.graph));
}

#[test]
fn equilibrium_cost_equals_the_potential() {
    let spec = baseline();
    let opts = SolverOptions::default().with_tol(1e-12);
    let sol = solve(&spec, 0.0, &BASELINE_MU, &opts).unwrap();
    let star = Control::optimal(&spec.graph);
    let q = rate_matrix(&spec, &sol, star.clone()).unwrap();
    let j = cost_ode(&q, &player_costs(&spec, &sol, &star)).unwrap();
    for (a, b) in j.iter().zip(sol.value()) {
        assert!((a - b).abs() < 1e-5);
    }
    let check = propagator_check(&q, &sol.rho).unwrap();
    assert!(check.row_sum_gap <= 1e-10 && check.chapman_kolmogorov_gap <= 1e-8, "{check:?}");
    assert!(check.min_entry >= 0.0 && check.max_entry <= 1.0);
    assert!(consistency_check(&q, &sol.rho).unwrap() < 1e-8);

    let mut worst = f64::INFINITY;
    for vertex in 0..4 {
        for a in [[0.3, -0.2, 0.1], [-0.4, 0.0, 0.4]] {
            let control = Control::deviation(&spec.graph, vertex, &a).unwrap();
            let qd = rate_matrix(&spec, &sol, control.clone()).unwrap();
            assert!(qd.admissibility().admissible);
            let jd = cost_ode(&qd, &player_costs(&spec, &sol, &control)).unwrap();
            worst = worst.min(jd[vertex] - j[vertex]);
        }
    }
    assert!(worst >= -1e-8, "{worst}");
}

#[test]
fn certificate_on_the_baseline_with_few_paths() {
    let spec = baseline();
    let sol = solve(&spec, 0.0, &BASELINE_MU, &SolverOptions::default().with_tol(1e-12)).unwrap();
    let opts = NashOptions { random_directions: 3, paths: 4_000, ..Default::default() };
    let report = nash_certificate(&spec, &sol, &opts).unwrap();
    assert!(report.admissible && report.violations.is_empty());
    assert!(report.equality_gap.unwrap() <= 1e-5);
    assert!(report.min_deviation_gap.unwrap() >= -1e-8);
    assert_eq!(report.deviation_gaps.len() + report.skipped_deviations, 4 * (2 * 4 + 3 * 2));
    let mc = report.mc.as_ref().unwrap();
    assert!(mc.max_cost_z < 4.0 && mc.max_martingale_z < 4.0, "{mc:?}");
    let again = nash_certificate(&spec, &sol, &opts).unwrap();
    assert_eq!(report, again);
    for d in &report.deviation_gaps {
        assert_eq!(d.shift[d.vertex], 0.0);
        assert_eq!(d.shift[(d.vertex + 2) % 4], 0.0);
    }
}

#[test]
fn torus_margins_grow_with_resolution() {
    let points = torus_sweep(&[4, 8, 16], ModelSpec::default(), 1.0, &SolverOptions::default()).unwrap();
    assert!(monotone_increasing(&points), "{points:?}");
    assert!(points.iter().all(|p| p.admissible));
    assert_eq!(points.iter().map(|p| p.omega).collect::<Vec<_>>(), vec![16.0, 64.0, 256.0]);
    let profile = torus_profile(8);
    assert!((profile.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!((profile[0] / profile[4] - 3.0).abs() < 1e-12);
    let p = |m: f64| graphmfg::nash::TorusPoint { n: 0, omega: 0.0, steps: 0, min_rate: m, admissible: true };
    assert!(!monotone_increasing(&[p(1.0), p(1.0)]));
    let _ = DVector::<f64>::zeros(1);
}
