//! The flow map `Φ` and its damped Picard iteration.
//!
//! `Φ(μ)` is the law of the optimally controlled state when the flow `μ` is
//! frozen: solve the backward lattice problem, simulate forward with the
//! resulting feedback, and take the thinned empirical flow. Every evaluation
//! reuses the same Brownian draws, so `Φ` is a deterministic map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fbsde::{
    evaluate_cost, simulate_controlled, simulate_forward, solve_frozen_fbsde, DecouplingField, EquilibriumPolicy,
    LatticeConfig, PathEnsemble, SimulationSpec, TimeGrid,
};
use crate::model::{AssumptionReport, Condition, MfgModel};
use crate::rng::{derive_seed, streams};
use crate::stats::Estimate;
use crate::wasserstein::{DiscreteMeasure, MeasureFlow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    /// Mixture weight `θ` of the new image.
    pub damping: f64,
    /// Stop when `sup_t W_2(Φ(μ)_t, μ_t)` falls to this level.
    pub tolerance: f64,
    pub max_iters: usize,
    pub n_particles: usize,
    pub support: usize,
    pub n_steps: usize,
    pub lattice: LatticeConfig,
    pub seed: u64,
    /// Simulate `Φ` with antithetic noise pairs.
    pub antithetic: bool,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 0.5,
            tolerance: 0.01,
            max_iters: 50,
            n_particles: 20_000,
            support: 512,
            n_steps: 100,
            lattice: LatticeConfig::default(),
            seed: 0,
            antithetic: true,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("fixed-point tolerance must be positive"));
        }
        if self.n_particles < 100 {
            return Err(Error::invalid("at least 100 particles are required"));
        }
        if self.antithetic && !self.n_particles.is_multiple_of(2) {
            return Err(Error::invalid("antithetic sampling needs an even particle count"));
        }
        if self.max_iters == 0 || self.support == 0 || self.n_steps == 0 {
            return Err(Error::invalid("max_iters, support and n_steps must be positive"));
        }
        self.lattice.validate()
    }

    pub fn grid(&self, model: &MfgModel) -> Result<TimeGrid> {
        TimeGrid::new(model.horizon(), self.n_steps)
    }

    /// Seed of the common random numbers shared by every `Φ` evaluation.
    pub fn crn_seed(&self) -> u64 {
        derive_seed(self.seed, streams::FIXEDPOINT, &[])
    }

    fn thin_seed(&self) -> u64 {
        derive_seed(self.seed, streams::THIN, &[])
    }
}

/// Everything produced by one evaluation of `Φ`.
#[derive(Clone, Debug)]
pub struct PhiImage {
    pub flow: MeasureFlow,
    pub field: DecouplingField,
    pub paths: PathEnsemble,
}

pub fn phi_full<E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    config: &FixedPointConfig,
    exec: &E,
) -> Result<PhiImage> {
    let field = solve_frozen_fbsde(model, flow, &config.lattice, exec)?;
    let policy = EquilibriumPolicy::new(model, flow, &field)?;
    let spec = SimulationSpec {
        record_adjoint: true,
        antithetic: config.antithetic,
        ..SimulationSpec::new(config.n_particles, config.crn_seed())
    };
    let paths = simulate_controlled(model, flow, &policy, &spec, exec)?;
    let image = paths.empirical_flow(config.support, config.thin_seed())?;
    Ok(PhiImage {
        flow: image,
        field,
        paths,
    })
}

pub fn phi_map<E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    config: &FixedPointConfig,
    exec: &E,
) -> Result<MeasureFlow> {
    Ok(phi_full(model, flow, config, exec)?.flow)
}

#[derive(Clone, Debug)]
pub struct MfgSolution {
    /// Last iterate `μ^k`; when converged, `sup_t W_2(Φ(μ^k)_t, μ^k_t) <= ε`.
    pub flow: MeasureFlow,
    /// Decoupling field solved against `flow`.
    pub field: DecouplingField,
    /// Cost of the representative player facing `flow`.
    pub cost: Estimate,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
}

impl MfgSolution {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }

    pub fn iterations(&self) -> usize {
        self.residual_history.len()
    }
}

/// Consecutive residual increases that count as divergence.
pub const DIVERGENCE_RUN: usize = 5;

fn damped(current: &MeasureFlow, image: &MeasureFlow, config: &FixedPointConfig) -> Result<MeasureFlow> {
    let seed = config.thin_seed();
    let measures = current
        .measures()
        .iter()
        .zip(image.measures())
        .enumerate()
        .map(|(j, (a, b))| {
            let mut rng = crate::rng::StreamRng::new(seed, streams::THIN, &[j as u64, 1]);
            Ok(DiscreteMeasure::mixture(a, b, config.damping)?.thin(config.support, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(*current.grid(), measures)
}

fn require_convexity(model: &MfgModel, seed: u64) -> Result<()> {
    let violation = model.convexity_check(seed, 200);
    if violation > 0.0 {
        return Err(Error::AssumptionViolation(AssumptionReport {
            conditions: vec![Condition {
                name: "strict convexity in the control (sampled)".into(),
                passed: false,
                blocking: true,
                detail: format!("largest violation {violation:.3e}"),
            }],
            gamma: None,
        }));
    }
    Ok(())
}

/// Damped Picard iteration `μ^{k+1} = thin((1-θ)μ^k + θΦ(μ^k))`, started from
/// `μ^0 = Φ(δ_{x0})`.
///
/// Non-convergence and divergence are reported in the result, never as errors.
pub fn solve_mfg<E: Executor>(model: &MfgModel, config: &FixedPointConfig, exec: &E) -> Result<MfgSolution> {
    config.validate()?;
    require_convexity(model, config.seed)?;
    let grid = config.grid(model)?;
    let start = MeasureFlow::dirac(grid, model.x0());
    let initial = phi_map(model, &start, config, exec)?;
    solve_mfg_from(model, initial, config, exec)
}

/// As [`solve_mfg`] with a caller-chosen initial flow.
pub fn solve_mfg_from<E: Executor>(
    model: &MfgModel,
    initial: MeasureFlow,
    config: &FixedPointConfig,
    exec: &E,
) -> Result<MfgSolution> {
    config.validate()?;
    let mut current = initial;
    let mut history = Vec::new();
    let mut increases = 0;
    loop {
        let image = phi_full(model, &current, config, exec)?;
        let residual = current.sup_w2(&image.flow)?;
        if let Some(&prev) = history.last() {
            increases = if residual > prev { increases + 1 } else { 0 };
        }
        history.push(residual);
        let converged = residual <= config.tolerance;
        let diverged = increases >= DIVERGENCE_RUN;
        if converged || diverged || history.len() >= config.max_iters {
            let cost = evaluate_cost(model, &image.paths, &current)?;
            return Ok(MfgSolution {
                flow: current,
                field: image.field,
                cost,
                residual_history: history,
                converged,
                diverged,
            });
        }
        current = damped(&current, &image.flow, config)?;
    }
}

/// `sup_t W_2` between a fresh simulation under the solution's feedback and
/// the solution flow; small values instantiate the matching condition
/// `Law(X_t) = μ_t`.
pub fn matching_residual<E: Executor>(
    model: &MfgModel,
    solution: &MfgSolution,
    n_particles: usize,
    seed: u64,
    support: usize,
    exec: &E,
) -> Result<MatchingCheck> {
    let paths = simulate_forward(model, &solution.flow, &solution.field, n_particles, seed, exec)?;
    let fresh = paths.empirical_flow(support, derive_seed(seed, streams::THIN, &[]))?;
    Ok(MatchingCheck {
        residual: fresh.sup_w2(&solution.flow)?,
        paths,
    })
}

#[derive(Clone, Debug)]
pub struct MatchingCheck {
    pub residual: f64,
    /// The fresh paths behind `residual`.
    pub paths: PathEnsemble,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub lipschitz: f64,
    /// Smallest `c` with `|u(t, x)| <= c(1 + |x|)` on the lattice.
    pub growth: f64,
    pub cap: Option<f64>,
    pub exceeds_cap: bool,
}

pub fn check_value_function(field: &DecouplingField, cap: Option<f64>) -> RegularityReport {
    let lipschitz = field.lipschitz();
    let growth = field.growth();
    RegularityReport {
        lipschitz,
        growth,
        cap,
        exceeds_cap: cap.is_some_and(|c| growth > c || lipschitz > c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub distance: f64,
    /// Set when two converged runs end farther apart than `3ε`.
    pub potential_non_uniqueness: bool,
}

pub fn compare_solutions(a: &MfgSolution, b: &MfgSolution, tolerance: f64) -> Result<UniquenessReport> {
    let distance = a.flow.sup_w2(&b.flow)?;
    Ok(UniquenessReport {
        distance,
        potential_non_uniqueness: a.converged && b.converged && distance > 3.0 * tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::fbsde::LatticeSpec;
    use crate::linalg::Matrix;
    use crate::model::{build_lq_model, ScalarLq};

    fn small_config() -> FixedPointConfig {
        FixedPointConfig {
            n_particles: 2000,
            support: 128,
            n_steps: 20,
            lattice: LatticeConfig {
                spacing: 0.1,
                ..LatticeConfig::default()
            },
            seed: 7,
            ..FixedPointConfig::default()
        }
    }

    fn measure_free() -> MfgModel {
        let spec = ScalarLq {
            q: 1.0,
            qbar: 0.0,
            m: 1.0,
            mbar: 0.0,
            n: 1.0,
            b0: 0.0,
            b1: 0.0,
            b2: 1.0,
            sigma: 1.0,
            x0: 1.0,
            horizon: 1.0,
        };
        build_lq_model(&spec.into()).unwrap()
    }

    #[test]
    fn measure_free_phi_ignores_input() {
        let m = measure_free();
        let cfg = small_config();
        let grid = cfg.grid(&m).unwrap();
        let a = phi_map(&m, &MeasureFlow::dirac(grid, &[1.0]), &cfg, &Sequential).unwrap();
        let b = phi_map(&m, &MeasureFlow::dirac(grid, &[-4.0]), &cfg, &Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn measure_free_converges_in_one_iteration() {
        let m = measure_free();
        let sol = solve_mfg(&m, &small_config(), &Sequential).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.residual_history, vec![0.0]);
    }

    #[test]
    fn config_invariants() {
        let mut c = FixedPointConfig::default();
        assert!(c.validate().is_ok());
        c.damping = 0.0;
        assert!(c.validate().is_err());
        c = FixedPointConfig {
            n_particles: 99,
            ..FixedPointConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn regularity_examples() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let lat = LatticeSpec::centered(&[0.0], 5.0, 0.1).unwrap();
        let zero = DecouplingField::from_fn(grid, lat.clone(), |_, _, o| o[0] = 0.0).unwrap();
        let r = check_value_function(&zero, None);
        assert_eq!((r.lipschitz, r.growth, r.exceeds_cap), (0.0, 0.0, false));
        let quad = DecouplingField::from_fn(grid, lat, |_, x, o| o[0] = x[0] * x[0]).unwrap();
        assert!(check_value_function(&quad, Some(3.0)).exceeds_cap);
    }

    #[test]
    fn nonconvex_model_is_refused() {
        let m = MfgModel::builder(1.0, vec![0.0], Matrix::scalar(1.0), 1)
            .b2(|_| Matrix::scalar(1.0))
            .running_cost(
                |_, _, _, a| -a[0] * a[0],
                |_, _, _, _, o| o[0] = 0.0,
                |_, _, _, a, o| o[0] = -2.0 * a[0],
            )
            .terminal_cost(|_, _| 0.0, |_, _, o| o[0] = 0.0)
            .lambda(1.0)
            .c_l(1.0)
            .build()
            .unwrap();
        assert!(matches!(
            solve_mfg(&m, &small_config(), &Sequential),
            Err(Error::AssumptionViolation(_))
        ));
    }
}
