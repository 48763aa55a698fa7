use alloc::vec::Vec;

use super::PathEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::model::MfgModel;
use crate::stats::{pairwise_sum, Estimate};
use crate::wasserstein::MeasureFlow;

/// Per-particle realized cost `g(X_T, μ_T) + Δ Σ_j f(t_j, X_j, μ_j, α_j)`.
pub fn running_and_terminal_cost(model: &MfgModel, paths: &PathEnsemble, flow: &MeasureFlow) -> Result<Vec<f64>> {
    if flow.grid() != &paths.grid {
        return Err(Error::invalid("paths and flow live on different grids"));
    }
    check_dim("path dimension", model.state_dim(), paths.dim)?;
    let grid = paths.grid;
    let n = grid.n_steps();
    let mut running = Vec::with_capacity(n);
    Ok((0..paths.n_particles)
        .map(|p| {
            running.clear();
            for j in 0..n {
                running.push(model.f(grid.t(j), paths.state(p, j), flow.at(j), paths.control(p, j)));
            }
            model.g(paths.state(p, n), flow.at(n)) + grid.dt() * pairwise_sum(&running)
        })
        .collect())
}

/// Monte Carlo estimate of `J = E[g(X_T, μ_T) + ∫ f dt]` with its standard error.
pub fn evaluate_cost(model: &MfgModel, paths: &PathEnsemble, flow: &MeasureFlow) -> Result<Estimate> {
    Ok(paths.estimate(&running_and_terminal_cost(model, paths, flow)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::fbsde::{simulate_controlled, ConstantPolicy, SimulationSpec, TimeGrid};
    use crate::linalg::Matrix;
    use alloc::vec;

    fn model(run: f64) -> MfgModel {
        MfgModel::builder(1.0, vec![0.0], Matrix::scalar(1.0), 1)
            .b2(|_| Matrix::scalar(1.0))
            .running_cost(
                move |_, _, _, _| run,
                |_, _, _, _, o| o[0] = 0.0,
                |_, _, _, _, o| o[0] = 0.0,
            )
            .terminal_cost(|_, _| 0.0, |_, _, o| o[0] = 0.0)
            .lambda(1.0)
            .c_l(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn constant_integrands() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let flow = MeasureFlow::dirac(grid, &[0.0]);
        for (run, expect) in [(0.0, 0.0), (1.0, 1.0)] {
            let m = model(run);
            let paths = simulate_controlled(
                &m,
                &flow,
                &ConstantPolicy(vec![0.0]),
                &SimulationSpec::new(50, 3),
                &Sequential,
            )
            .unwrap();
            let est = evaluate_cost(&m, &paths, &flow).unwrap();
            assert_eq!(est.mean, expect);
            assert_eq!(est.stderr, 0.0);
        }
    }
}
