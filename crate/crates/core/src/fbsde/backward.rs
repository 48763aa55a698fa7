use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::field::{eval_slice, DecouplingField, LatticeSpec};
use super::quadrature::GaussHermite;
use crate::error::{check_dim, Error, Result};
use crate::exec::{chunks, Executor};
use crate::hamiltonian::minimize_into;
use crate::math;
use crate::model::MfgModel;
use crate::wasserstein::MeasureFlow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    /// Lattice spacing `h`.
    pub spacing: f64,
    /// Half-width of the lattice box around `x0`; the default rule is used when
    /// absent.
    pub radius: Option<f64>,
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    /// Gauss–Hermite points per noise dimension.
    pub quadrature_order: usize,
    /// Quadrature points farther than `margin · radius` outside the box are
    /// counted as extrapolation warnings.
    pub extrapolation_margin: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            spacing: 0.02,
            radius: None,
            inner_tol: 1e-9,
            max_inner_iters: 100,
            quadrature_order: 8,
            extrapolation_margin: 0.25,
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) {
            return Err(Error::invalid("lattice spacing must be positive"));
        }
        if self.radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::invalid("lattice radius must be positive"));
        }
        if !(self.inner_tol > 0.0) || self.max_inner_iters == 0 || self.quadrature_order == 0 {
            return Err(Error::invalid(
                "inner tolerance, budget and quadrature order must be positive",
            ));
        }
        if !(self.extrapolation_margin >= 0.0) {
            return Err(Error::invalid("extrapolation margin must be non-negative"));
        }
        Ok(())
    }
}

/// `max(6‖σ‖√T, 4(1 + |x0|) e^{c_L T})`.
pub fn lattice_radius(model: &MfgModel) -> f64 {
    let t = model.horizon();
    let noise = 6.0 * model.sigma().op_norm() * math::sqrt(t);
    let drift = 4.0 * (1.0 + math::norm(model.x0())) * math::exp(model.c_l() * t);
    noise.max(drift)
}

const CHUNK: usize = 256;

/// Backward sweep for the decoupling field of the FBSDE with the flow frozen.
///
/// At each node the value `y` solves
/// `y = E[û_{j+1}(x + b Δ + σ√Δ ξ)] + Δ (b1ᵀ y + ∂_x f)` with `α = α̂(t_j, x, μ_j, y)`,
/// by Picard iteration started from `û_{j+1}(x)`.
pub fn solve_frozen_fbsde<E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    config: &LatticeConfig,
    exec: &E,
) -> Result<DecouplingField> {
    config.validate()?;
    let d = model.state_dim();
    check_dim("flow dimension", d, flow.dim())?;
    let grid = *flow.grid();
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(Error::invalid("flow grid horizon differs from the model horizon"));
    }
    let radius = config.radius.unwrap_or_else(|| lattice_radius(model));
    let lattice = LatticeSpec::centered(model.x0(), radius, config.spacing)?;
    let rule = GaussHermite::new(config.quadrature_order, model.noise_dim());
    let np = lattice.n_points();
    let stride = np * d;
    let dt = grid.dt();
    let n = grid.n_steps();

    let mut values = vec![0.0; grid.n_nodes() * stride];
    {
        let last = &mut values[n * stride..];
        let mu_t = flow.at(n);
        let mut x = vec![0.0; d];
        for p in 0..np {
            lattice.point(p, &mut x);
            model.dg_dx(&x, mu_t, &mut last[p * d..(p + 1) * d]);
        }
    }

    // σ√Δ ξ_q for every quadrature node
    let sqdt = math::sqrt(dt);
    let shifts: Vec<f64> = (0..rule.len())
        .flat_map(|q| {
            let xi: Vec<f64> = rule.node(q).iter().map(|z| z * sqdt).collect();
            model.sigma().mul_vec(&xi)
        })
        .collect();
    let threshold = config.extrapolation_margin * radius;

    let mut warnings = 0u64;
    for j in (0..n).rev() {
        let t = grid.t(j);
        let mu = flow.at(j);
        let slice = model.slice(t);
        let mut b0 = vec![0.0; d];
        model.b0(t, mu, &mut b0);
        let (head, tail) = values.split_at_mut((j + 1) * stride);
        let next: &[f64] = &tail[..stride];
        let ctx = StepContext {
            model,
            lattice: &lattice,
            rule: &rule,
            shifts: &shifts,
            next,
            slice: &slice,
            b0: &b0,
            mu,
            dt,
            threshold,
            config,
            step: j,
        };
        let ranges: Vec<_> = chunks(np, CHUNK).collect();
        let results = exec.map(ranges.len(), |c| ctx.solve_range(ranges[c].clone()));
        let current = &mut head[j * stride..];
        for (range, res) in ranges.iter().zip(results) {
            let (vals, w) = res?;
            current[range.start * d..range.end * d].copy_from_slice(&vals);
            warnings += w;
        }
    }
    DecouplingField::from_values(grid, lattice, values, warnings)
}

struct StepContext<'a> {
    model: &'a MfgModel,
    lattice: &'a LatticeSpec,
    rule: &'a GaussHermite,
    shifts: &'a [f64],
    next: &'a [f64],
    slice: &'a crate::model::CoefficientSlice,
    b0: &'a [f64],
    mu: &'a crate::wasserstein::DiscreteMeasure,
    dt: f64,
    threshold: f64,
    config: &'a LatticeConfig,
    step: usize,
}

impl StepContext<'_> {
    fn solve_range(&self, range: core::ops::Range<usize>) -> Result<(Vec<f64>, u64)> {
        let d = self.model.state_dim();
        let k = self.model.control_dim();
        let mut out = vec![0.0; range.len() * d];
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut y_new = vec![0.0; d];
        let mut alpha = vec![0.0; k];
        let mut drift = vec![0.0; d];
        let mut dfx = vec![0.0; d];
        let mut probe = vec![0.0; d];
        let mut u = vec![0.0; d];
        let mut warnings = 0u64;
        for (slot, p) in range.enumerate() {
            self.lattice.point(p, &mut x);
            eval_slice(self.lattice, self.next, &x, &mut y);
            let mut converged = false;
            let mut residual = f64::INFINITY;
            for _ in 0..self.config.max_inner_iters {
                minimize_into(self.model, self.slice, &x, self.mu, &y, &mut alpha)?;
                self.model.drift_with(self.slice, self.b0, &x, &alpha, &mut drift);
                y_new.iter_mut().for_each(|v| *v = 0.0);
                for q in 0..self.rule.len() {
                    let shift = &self.shifts[q * d..(q + 1) * d];
                    for i in 0..d {
                        probe[i] = x[i] + drift[i] * self.dt + shift[i];
                    }
                    eval_slice(self.lattice, self.next, &probe, &mut u);
                    let w = self.rule.weights[q];
                    for i in 0..d {
                        y_new[i] += w * u[i];
                    }
                }
                self.model.df_dx(self.slice.t, &x, self.mu, &alpha, &mut dfx);
                // driver Δ(b1ᵀ y + ∂_x f)
                self.slice.b1.tr_mul_vec_add(&y, &mut dfx);
                for i in 0..d {
                    y_new[i] += self.dt * dfx[i];
                }
                residual = y_new.iter().zip(&y).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                core::mem::swap(&mut y, &mut y_new);
                if !residual.is_finite() {
                    break;
                }
                if residual <= self.config.inner_tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::InnerFixedPoint {
                    step: self.step,
                    node: p,
                    residual,
                });
            }
            // count extrapolations at the accepted iterate
            minimize_into(self.model, self.slice, &x, self.mu, &y, &mut alpha)?;
            self.model.drift_with(self.slice, self.b0, &x, &alpha, &mut drift);
            for q in 0..self.rule.len() {
                let shift = &self.shifts[q * d..(q + 1) * d];
                for i in 0..d {
                    probe[i] = x[i] + drift[i] * self.dt + shift[i];
                }
                if self.lattice.excess(&probe) > self.threshold {
                    warnings += 1;
                }
            }
            out[slot * d..(slot + 1) * d].copy_from_slice(&y);
        }
        Ok((out, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::fbsde::TimeGrid;
    use crate::linalg::Matrix;
    use crate::model::{build_lq_model, ScalarLq};

    fn zero_model() -> MfgModel {
        MfgModel::builder(1.0, vec![0.0], Matrix::scalar(1.0), 1)
            .b2(|_| Matrix::scalar(1.0))
            .running_cost(
                |_, _, _, a| 0.5 * a[0] * a[0],
                |_, _, _, _, o| o[0] = 0.0,
                |_, _, _, a, o| o[0] = a[0],
            )
            .terminal_cost(|_, _| 0.0, |_, _, o| o[0] = 0.0)
            .lambda(0.5)
            .c_l(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let m = zero_model();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let flow = MeasureFlow::dirac(grid, &[0.0]);
        let cfg = LatticeConfig {
            spacing: 0.1,
            radius: Some(3.0),
            ..LatticeConfig::default()
        };
        let field = solve_frozen_fbsde(&m, &flow, &cfg, &Sequential).unwrap();
        assert!(field.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // T = 0.5, Δ = 0.5, flow δ_1: u(T, x) = x + 0.5, α̂ = -y and the driver
        // is x + 0.5. With linear û the quadrature is exact, so
        // y = (x - 0.5y + 0.5) + 0.5(x + 0.5), i.e. y = x + 0.5.
        let spec = ScalarLq {
            q: 1.0,
            qbar: 0.5,
            m: 1.0,
            mbar: 0.5,
            n: 1.0,
            b0: 0.0,
            b1: 0.0,
            b2: 1.0,
            sigma: 1.0,
            x0: 1.0,
            horizon: 0.5,
        };
        let m = build_lq_model(&spec.into()).unwrap();
        let grid = TimeGrid::new(0.5, 1).unwrap();
        let flow = MeasureFlow::dirac(grid, &[1.0]);
        let cfg = LatticeConfig {
            spacing: 0.05,
            ..LatticeConfig::default()
        };
        let field = solve_frozen_fbsde(&m, &flow, &cfg, &Sequential).unwrap();
        let mut out = [0.0];
        for x in [-1.0, 0.5, 2.0] {
            field.eval(0, &[x], &mut out);
            assert!((out[0] - (x + 0.5)).abs() < 1e-8, "x={x}: {}", out[0]);
        }
    }
}
