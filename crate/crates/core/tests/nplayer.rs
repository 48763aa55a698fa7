use mfg_core::fbsde::{solve_frozen_fbsde, LatticeConfig};
use mfg_core::lq_oracle::{lq_cost, solve_lq_riccati};
use mfg_core::model::{build_lq_model, ScalarLq};
use mfg_core::nplayer::{chaos_experiment, deviation_sweep, simulate_nplayer, Deviation, SweepConfig};
use mfg_core::{DecouplingField, LqSpec, MeasureFlow, MfgModel, Sequential, TimeGrid};

struct Setup {
    model: MfgModel,
    flow: MeasureFlow,
    field: DecouplingField,
    limit: f64,
}

fn setup(s: ScalarLq, n_steps: usize) -> Setup {
    let spec: LqSpec = s.into();
    let model = build_lq_model(&spec).unwrap();
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    let sol = solve_lq_riccati(&spec, grid).unwrap();
    let flow = sol.gaussian_flow(256).unwrap();
    let field = solve_frozen_fbsde(&model, &flow, &LatticeConfig::default(), &Sequential).unwrap();
    let limit = lq_cost(&sol, &spec).unwrap();
    Setup {
        model,
        flow,
        field,
        limit,
    }
}

#[test]
fn mean_dependent_drift_gives_decaying_coupling() {
    let s = setup(
        ScalarLq {
            b0: 0.5,
            ..ScalarLq::reference()
        },
        50,
    );
    let t = chaos_experiment(&s.model, &s.field, &s.flow, s.limit, &[8, 32, 128], 100, 3, &Sequential).unwrap();
    for w in t.rows.windows(2) {
        assert!(w[1].coupling_max.mean < w[0].coupling_max.mean, "{t:?}");
        assert!(w[1].w2sq_sup.mean < w[0].w2sq_sup.mean);
    }
    assert!(t.rows[0].coupling_max.mean > 0.0);
    assert!(t.bound_holds, "{t:?}");
}

#[test]
fn acceptance_spec_decouples_exactly() {
    let s = setup(ScalarLq::reference(), 50);
    let t = chaos_experiment(&s.model, &s.field, &s.flow, s.limit, &[4, 16], 5, 3, &Sequential).unwrap();
    assert!(t
        .rows
        .iter()
        .all(|r| r.coupling_max.mean == 0.0 && r.coupling_max.stderr == 0.0));
    assert!(t.rows.iter().all(|r| r.w2sq_sup.mean > 0.0));
}

#[test]
fn players_are_exchangeable() {
    let s = setup(
        ScalarLq {
            b0: 0.5,
            ..ScalarLq::reference()
        },
        50,
    );
    let costs = simulate_nplayer(&s.model, &s.field, &s.flow, 8, 400, 17, &Sequential).unwrap();
    let pooled = costs.pooled.mean;
    for (i, e) in costs.per_player.iter().enumerate() {
        assert!(
            (e.mean - pooled).abs() <= 3.0 * e.stderr,
            "player {i}: {e:?} vs {pooled}"
        );
    }
}

/// `J̄^{N,1}` under `β ≡ √A` pays at least `A/2` in control effort on `[0, 1]`.
#[test]
fn large_constant_deviations_lose_more() {
    let s = setup(ScalarLq::reference(), 50);
    let cfg = SweepConfig {
        replications: 100,
        seed: 2,
        ..SweepConfig::default()
    };
    let devs = [Deviation::Constant(vec![10f64.sqrt()]), Deviation::Constant(vec![10.0])];
    let r = deviation_sweep(&s.model, &s.field, &s.flow, s.limit, &[16], &devs, &cfg, &Sequential).unwrap();
    let (small, large) = (&r.deviations[0], &r.deviations[1]);
    assert!(small.improvement.mean + 3.0 * small.improvement.stderr < 0.0);
    assert!(
        large.improvement.mean + 3.0 * (large.improvement.stderr + small.improvement.stderr) < small.improvement.mean
    );
    assert!(-small.improvement.mean > 10.0 / 2.0 - 1.0);
    assert!(-large.improvement.mean > 100.0 / 2.0 - 1.0);
}

#[test]
fn zero_control_is_strictly_worse_at_64() {
    let s = setup(ScalarLq::reference(), 50);
    let cfg = SweepConfig {
        replications: 100,
        seed: 1,
        ..SweepConfig::default()
    };
    let r = deviation_sweep(
        &s.model,
        &s.field,
        &s.flow,
        s.limit,
        &[64],
        &[Deviation::Zero],
        &cfg,
        &Sequential,
    )
    .unwrap();
    let row = &r.deviations[0];
    assert!(row.improvement.mean < -3.0 * row.improvement.stderr, "{row:?}");
    assert!(row.within);
}

/// The pooled 64-player cost sits at the limit cost shifted by the finite-`N`
/// gap measured in the chaos experiment.
#[test]
fn pooled_cost_matches_limit_plus_gap() {
    let s = setup(ScalarLq::reference(), 50);
    let costs = simulate_nplayer(&s.model, &s.field, &s.flow, 64, 200, 5, &Sequential).unwrap();
    let t = chaos_experiment(&s.model, &s.field, &s.flow, s.limit, &[64], 200, 5, &Sequential).unwrap();
    let gap = t.rows[0].cost_gap;
    let target = s.limit + gap.mean;
    let tol = 3.0 * (costs.pooled.stderr.powi(2) + gap.stderr.powi(2)).sqrt() + 5e-3;
    assert!(
        (costs.pooled.mean - target).abs() <= tol,
        "{:?} vs {target} ± {tol}",
        costs.pooled
    );
}

#[test]
fn frozen_best_response_stays_within_allowance() {
    let s = setup(ScalarLq::reference(), 50);
    let cfg = SweepConfig {
        replications: 50,
        pilot_replications: 10,
        pilot_support: 256,
        seed: 8,
        ..SweepConfig::default()
    };
    let devs = [
        Deviation::Scaled(0.9),
        Deviation::Scaled(1.1),
        Deviation::FrozenBestResponse,
    ];
    let r = deviation_sweep(&s.model, &s.field, &s.flow, s.limit, &[16], &devs, &cfg, &Sequential).unwrap();
    assert!(r.all_within, "{r:?}");
}
