//! Numerical routes against the Riccati solution and closed forms.

use mfg_core::fbsde::{evaluate_cost, simulate_forward, solve_frozen_fbsde, LatticeConfig};
use mfg_core::fixedpoint::{phi_full, FixedPointConfig};
use mfg_core::lq_oracle::{lq_cost, solve_lq_riccati};
use mfg_core::model::{build_lq_model, ScalarLq};
use mfg_core::{LqSpec, MeasureFlow, Sequential, TimeGrid};

fn grid() -> TimeGrid {
    TimeGrid::new(1.0, 100).unwrap()
}

#[test]
fn frozen_field_matches_riccati_on_the_central_box() {
    let spec: LqSpec = ScalarLq::reference().into();
    let model = build_lq_model(&spec).unwrap();
    let sol = solve_lq_riccati(&spec, grid()).unwrap();
    let flow = sol.mean_flow().unwrap();
    let field = solve_frozen_fbsde(&model, &flow, &LatticeConfig::default(), &Sequential).unwrap();
    let mut worst = 0.0f64;
    let mut u = [0.0];
    for j in 0..grid().n_nodes() {
        for i in 0..=200 {
            let x = -2.0 + 0.02 * i as f64;
            field.eval(j, &[x], &mut u);
            let exact = sol.eta[j][(0, 0)] * x + sol.chi[j][0];
            worst = worst.max((u[0] - exact).abs());
        }
    }
    assert!(worst <= 1e-3, "lattice error {worst}");
}

#[test]
fn forward_mean_tracks_riccati_mean() {
    let spec: LqSpec = ScalarLq::reference().into();
    let model = build_lq_model(&spec).unwrap();
    let sol = solve_lq_riccati(&spec, grid()).unwrap();
    let flow = sol.gaussian_flow(512).unwrap();
    let field = solve_frozen_fbsde(&model, &flow, &LatticeConfig::default(), &Sequential).unwrap();
    let paths = simulate_forward(&model, &flow, &field, 20_000, 11, &Sequential).unwrap();
    for j in (0..grid().n_nodes()).step_by(10) {
        let est = paths.mean_estimate(j, 0);
        assert!(
            (est.mean - sol.xbar[j][0]).abs() <= 3.0 * est.stderr + 1e-12,
            "t={}: {} vs {}",
            grid().t(j),
            est.mean,
            sol.xbar[j][0]
        );
    }
}

#[test]
fn monte_carlo_cost_matches_closed_form() {
    let spec: LqSpec = ScalarLq::terminal_only().into();
    let model = build_lq_model(&spec).unwrap();
    let sol = solve_lq_riccati(&spec, grid()).unwrap();
    let exact = 0.25 + 0.5 * std::f64::consts::LN_2;
    assert!((lq_cost(&sol, &spec).unwrap() - exact).abs() <= 1e-6);
    let flow = MeasureFlow::dirac(grid(), &[1.0]);
    let field = solve_frozen_fbsde(&model, &flow, &LatticeConfig::default(), &Sequential).unwrap();
    let paths = simulate_forward(&model, &flow, &field, 20_000, 3, &Sequential).unwrap();
    let est = evaluate_cost(&model, &paths, &flow).unwrap();
    assert!((est.mean - exact).abs() <= 3.0 * est.stderr, "{est:?} vs {exact}");
}

/// Against the constant mean path `m ≡ 1` the reference spec has `η ≡ 1`,
/// `χ ≡ 1/2` and `x̄_t = -1/2 + (3/2) e^{-t}`. Independent noise, so the
/// Euler bias stays well inside the Monte Carlo error.
#[test]
fn phi_image_mean_solves_the_frozen_mean_ode() {
    let spec: LqSpec = ScalarLq::reference().into();
    let model = build_lq_model(&spec).unwrap();
    let cfg = FixedPointConfig {
        seed: 4,
        antithetic: false,
        ..FixedPointConfig::default()
    };
    let flow = MeasureFlow::dirac(grid(), &[1.0]);
    let image = phi_full(&model, &flow, &cfg, &Sequential).unwrap();
    for j in (0..grid().n_nodes()).step_by(10) {
        let t = grid().t(j);
        let exact = -0.5 + 1.5 * (-t).exp();
        let est = image.paths.mean_estimate(j, 0);
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.stderr + 1e-12,
            "t={t}: {est:?} vs {exact}"
        );
    }
}

#[test]
fn oracle_flow_is_nearly_fixed() {
    let spec: LqSpec = ScalarLq::reference().into();
    let model = build_lq_model(&spec).unwrap();
    let sol = solve_lq_riccati(&spec, grid()).unwrap();
    let flow = sol.gaussian_flow(512).unwrap();
    let image = phi_full(&model, &flow, &FixedPointConfig::default(), &Sequential).unwrap();
    let residual = image.flow.sup_w2(&flow).unwrap();
    assert!(residual <= 0.05, "{residual}");
}
