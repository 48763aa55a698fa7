//! Refinement behaviour of the backward lattice scheme.

use mfg_core::fbsde::{solve_frozen_fbsde, DecouplingField, LatticeConfig};
use mfg_core::linalg::Matrix;
use mfg_core::lq_oracle::solve_lq_riccati;
use mfg_core::model::{build_lq_model, ScalarLq};
use mfg_core::{LqSpec, MeasureFlow, MfgModel, Sequential, TimeGrid};

fn lattice(h: f64) -> LatticeConfig {
    LatticeConfig {
        spacing: h,
        ..LatticeConfig::default()
    }
}

fn lq_error(n_steps: usize, h: f64) -> f64 {
    let spec: LqSpec = ScalarLq::reference().into();
    let model = build_lq_model(&spec).unwrap();
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    let sol = solve_lq_riccati(&spec, grid).unwrap();
    let field = solve_frozen_fbsde(&model, &sol.mean_flow().unwrap(), &lattice(h), &Sequential).unwrap();
    let mut worst = 0.0f64;
    let mut u = [0.0];
    for j in 0..grid.n_nodes() {
        for i in 0..=100 {
            let x = -2.0 + 0.04 * i as f64;
            field.eval(j, &[x], &mut u);
            worst = worst.max((u[0] - sol.field_value(j, &[x])[0]).abs());
        }
    }
    worst
}

#[test]
fn lq_lattice_error_is_first_order() {
    let errs: Vec<f64> = [(25, 0.08), (50, 0.04), (100, 0.02)]
        .iter()
        .map(|&(n, h)| lq_error(n, h))
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..=2.6).contains(&ratio), "{errs:?}");
    }
    assert!(errs[2] <= 1e-3, "{errs:?}");
}

/// Mean-free log-cosh model: the field is nonlinear in `x`.
fn log_cosh() -> MfgModel {
    MfgModel::builder(1.0, vec![1.0], Matrix::scalar(1.0), 1)
        .b2(|_| Matrix::scalar(1.0))
        .running_cost(
            |_, x, _, a| 0.5 * x[0] * x[0] + 0.5 * a[0] * a[0] + 0.5 * a[0].cosh().ln(),
            |_, x, _, _, o| o[0] = x[0],
            |_, _, _, a, o| o[0] = a[0] + 0.5 * a[0].tanh(),
        )
        .terminal_cost(|x, _| 0.5 * x[0] * x[0], |x, _, o| o[0] = x[0])
        .lambda(0.5)
        .c_l(1.5)
        .build()
        .unwrap()
}

fn field(model: &MfgModel, h: f64) -> DecouplingField {
    let flow = MeasureFlow::dirac(TimeGrid::new(1.0, 50).unwrap(), &[1.0]);
    solve_frozen_fbsde(model, &flow, &lattice(h), &Sequential).unwrap()
}

#[test]
fn regularity_constants_are_stable_under_refinement() {
    let model = log_cosh();
    let coarse = field(&model, 0.04);
    let fine = field(&model, 0.02);
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    assert!(
        rel(coarse.lipschitz(), fine.lipschitz()) <= 0.1,
        "{} {}",
        coarse.lipschitz(),
        fine.lipschitz()
    );
    assert!(
        rel(coarse.growth(), fine.growth()) <= 0.1,
        "{} {}",
        coarse.growth(),
        fine.growth()
    );
    assert!(fine.lipschitz() >= 1.0 - 1e-9, "{}", fine.lipschitz());
}
