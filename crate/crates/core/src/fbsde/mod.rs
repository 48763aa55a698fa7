//! Adjoint FBSDE for a frozen flow of measures.
//!
//! The backward equation is solved on a space-time lattice, which yields the
//! decoupling field `u` with `Y_t = u(t, X_t)`. The forward equation is then
//! simulated by Euler–Maruyama under the feedback `α̂(t, x, μ_t, u(t, x))`.

mod backward;
mod cost;
mod field;
mod forward;
pub mod quadrature;
mod smp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::{lattice_radius, solve_frozen_fbsde, LatticeConfig};
pub use cost::{evaluate_cost, running_and_terminal_cost};
pub use field::{DecouplingField, LatticeSpec};
pub(crate) use forward::euler_step;
pub use forward::{
    simulate_controlled, simulate_forward, ConstantPolicy, EquilibriumPolicy, FnPolicy, PathEnsemble, Policy,
    ScaledPolicy, SimulationSpec,
};
pub use smp::{smp_comparison, SmpComparison, SmpShift};

/// Uniform grid `t_j = jΔ`, `Δ = T / n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("time horizon must be positive"));
        }
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_j`; the last node is exactly `T`.
    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|j| self.t(j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        assert_eq!(g.n_nodes(), 101);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(100), 1.0);
        assert!((g.t(37) - 0.37).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
