use alloc::vec;
use alloc::vec::Vec;

use super::{
    running_and_terminal_cost, simulate_controlled, DecouplingField, EquilibriumPolicy, Policy, SimulationSpec,
};
use crate::error::{check_dim, Result};
use crate::exec::Executor;
use crate::math::dot;
use crate::model::MfgModel;
use crate::stats::{pairwise_sum, Estimate};
use crate::wasserstein::MeasureFlow;

/// Optional changes to the perturbed system: its initial point and the flow
/// entering its drift. Costs are always evaluated against the reference flow.
#[derive(Clone, Debug, Default)]
pub struct SmpShift<'a> {
    pub x0: Option<Vec<f64>>,
    pub drift_flow: Option<&'a MeasureFlow>,
}

/// Both sides of the optimality-gap inequality
///
/// `J(α̂; μ) + ⟨x0' − x0, Y_0⟩ + λ E∫|β − α̂|² ≤ J([β, μ']; μ) + E∫⟨b0(t, μ') − b0(t, μ), Y_t⟩`
///
/// estimated on shared noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmpComparison {
    pub optimal: Estimate,
    pub perturbed: Estimate,
    /// `λ E∫|β_t − α̂_t|² dt`.
    pub penalty: Estimate,
    pub initial_term: f64,
    pub drift_term: Estimate,
    /// Left side minus right side, paired per particle.
    pub excess: Estimate,
}

impl SmpComparison {
    pub fn holds(&self, slack: f64) -> bool {
        self.excess.mean <= slack
    }
}

#[allow(clippy::too_many_arguments)]
pub fn smp_comparison<P: Policy, E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    field: &DecouplingField,
    beta: &P,
    shift: &SmpShift<'_>,
    n_particles: usize,
    seed: u64,
    exec: &E,
) -> Result<SmpComparison> {
    let d = model.state_dim();
    let k = model.control_dim();
    let grid = *flow.grid();
    let dt = grid.dt();
    let steps = grid.n_steps();
    let eq = EquilibriumPolicy::new(model, flow, field)?;
    let base_spec = SimulationSpec {
        record_adjoint: true,
        ..SimulationSpec::new(n_particles, seed)
    };
    let opt = simulate_controlled(model, flow, &eq, &base_spec, exec)?;
    let drift_flow = shift.drift_flow.unwrap_or(flow);
    if let Some(x0) = &shift.x0 {
        check_dim("shifted initial state", d, x0.len())?;
    }
    let pert_spec = SimulationSpec {
        x0: shift.x0.clone(),
        ..SimulationSpec::new(n_particles, seed)
    };
    let pert = simulate_controlled(model, drift_flow, beta, &pert_spec, exec)?;
    let j_opt = running_and_terminal_cost(model, &opt, flow)?;
    let j_pert = running_and_terminal_cost(model, &pert, flow)?;

    let initial_term = match &shift.x0 {
        Some(x0p) => {
            let mut y0 = vec![0.0; d];
            field.eval(0, model.x0(), &mut y0);
            let diff: Vec<f64> = x0p.iter().zip(model.x0()).map(|(a, b)| a - b).collect();
            dot(&diff, &y0)
        }
        None => 0.0,
    };
    let db0: Option<Vec<Vec<f64>>> = shift.drift_flow.map(|mu_p| {
        (0..steps)
            .map(|j| {
                let t = grid.t(j);
                let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
                model.b0(t, mu_p.at(j), &mut a);
                model.b0(t, flow.at(j), &mut b);
                a.iter().zip(&b).map(|(x, y)| x - y).collect()
            })
            .collect()
    });

    let lambda = model.lambda();
    let mut penalty = Vec::with_capacity(n_particles);
    let mut drift = Vec::with_capacity(n_particles);
    let mut excess = Vec::with_capacity(n_particles);
    let mut terms = Vec::with_capacity(steps);
    for p in 0..n_particles {
        terms.clear();
        for j in 0..steps {
            let (a, b) = (pert.control(p, j), opt.control(p, j));
            terms.push((0..k).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>());
        }
        let pen = lambda * dt * pairwise_sum(&terms);
        let dr = match &db0 {
            Some(db0) => {
                terms.clear();
                for (j, db) in db0.iter().enumerate() {
                    terms.push(dot(db, opt.adjoint(p, j).expect("adjoint recorded")));
                }
                dt * pairwise_sum(&terms)
            }
            None => 0.0,
        };
        penalty.push(pen);
        drift.push(dr);
        excess.push((j_opt[p] + initial_term + pen) - (j_pert[p] + dr));
    }
    Ok(SmpComparison {
        optimal: Estimate::from_samples(&j_opt),
        perturbed: Estimate::from_samples(&j_pert),
        penalty: Estimate::from_samples(&penalty),
        initial_term,
        drift_term: Estimate::from_samples(&drift),
        excess: Estimate::from_samples(&excess),
    })
}
