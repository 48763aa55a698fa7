//! Reduced Hamiltonian `H(t, x, μ, y, α) = <b(t, x, μ, α), y> + f(t, x, μ, α)`
//! and its minimizer in `α`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::model::{CoefficientSlice, LqSpec, MfgModel};
use crate::wasserstein::DiscreteMeasure;

/// Stationarity tolerance on `|∂_α H|`.
pub const STATIONARITY_TOL: f64 = 1e-8;
/// Newton iteration budget.
pub const MAX_ITERS: usize = 200;

pub fn hamiltonian_value(
    model: &MfgModel,
    t: f64,
    x: &[f64],
    mu: &DiscreteMeasure,
    y: &[f64],
    alpha: &[f64],
) -> Result<f64> {
    check_dim("x", model.state_dim(), x.len())?;
    check_dim("y", model.state_dim(), y.len())?;
    check_dim("alpha", model.control_dim(), alpha.len())?;
    check_dim("measure dimension", model.state_dim(), mu.dim())?;
    let slice = model.slice(t);
    let mut b0 = vec![0.0; model.state_dim()];
    model.b0(t, mu, &mut b0);
    let mut drift = vec![0.0; model.state_dim()];
    model.drift_with(&slice, &b0, x, alpha, &mut drift);
    Ok(math::dot(&drift, y) + model.f(t, x, mu, alpha))
}

/// The unique `α̂` with `b2(t)ᵀy + ∂_α f(t, x, μ, α̂) = 0`.
pub fn minimize_hamiltonian(model: &MfgModel, t: f64, x: &[f64], mu: &DiscreteMeasure, y: &[f64]) -> Result<Vec<f64>> {
    check_dim("x", model.state_dim(), x.len())?;
    check_dim("y", model.state_dim(), y.len())?;
    check_dim("measure dimension", model.state_dim(), mu.dim())?;
    let slice = model.slice(t);
    let mut out = vec![0.0; model.control_dim()];
    minimize_into(model, &slice, x, mu, y, &mut out)?;
    Ok(out)
}

/// Hot-path variant of [`minimize_hamiltonian`] with the time slice
/// precomputed and no dimension checks.
pub(crate) fn minimize_into(
    model: &MfgModel,
    slice: &CoefficientSlice,
    x: &[f64],
    mu: &DiscreteMeasure,
    y: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if let Some(gain) = &slice.lq_gain {
        gain.mul_vec_into(y, out);
        out.iter_mut().for_each(|a| *a = -*a);
        return Ok(());
    }
    newton(model, slice, x, mu, y, out)
}

/// `<b2ᵀ y, α> + f(α)`, the part of `H` that depends on `α`, with the size
/// of its rounding error.
fn reduced(model: &MfgModel, t: f64, x: &[f64], mu: &DiscreteMeasure, b2ty: &[f64], a: &[f64]) -> (f64, f64) {
    let lin = math::dot(b2ty, a);
    let f = model.f(t, x, mu, a);
    (lin + f, 64.0 * f64::EPSILON * (lin.abs() + f.abs() + 1.0))
}

fn gradient(model: &MfgModel, t: f64, x: &[f64], mu: &DiscreteMeasure, b2ty: &[f64], a: &[f64], out: &mut [f64]) {
    model.df_dalpha(t, x, mu, a, out);
    for (o, c) in out.iter_mut().zip(b2ty) {
        *o += c;
    }
}

fn newton(
    model: &MfgModel,
    slice: &CoefficientSlice,
    x: &[f64],
    mu: &DiscreteMeasure,
    y: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let t = slice.t;
    let k = model.control_dim();
    let mut b2ty = vec![0.0; k];
    slice.b2.tr_mul_vec_add(y, &mut b2ty);

    let mut a = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut trial = vec![0.0; k];
    let mut g_trial = vec![0.0; k];
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    let mut hess = crate::linalg::Matrix::zeros(k, k);
    gradient(model, t, x, mu, &b2ty, &a, &mut g);
    let (mut value, _) = reduced(model, t, x, mu, &b2ty, &a);
    let mut gnorm = math::norm(&g);

    for _ in 0..MAX_ITERS {
        if gnorm <= STATIONARITY_TOL {
            out.copy_from_slice(&a);
            return Ok(());
        }
        // finite-difference Hessian of the analytic gradient
        for j in 0..k {
            let h = 1e-5 * a[j].abs().max(1.0);
            trial.copy_from_slice(&a);
            trial[j] = a[j] + h;
            gradient(model, t, x, mu, &b2ty, &trial, &mut gp);
            trial[j] = a[j] - h;
            gradient(model, t, x, mu, &b2ty, &trial, &mut gm);
            for i in 0..k {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let hess_sym = hess.symmetric_part();
        let rhs = crate::linalg::Matrix::from_vec(k, 1, g.clone())?;
        let mut step: Vec<f64> = match hess_sym.solve(&rhs) {
            Ok(s) => s.as_slice().iter().map(|v| -v).collect(),
            Err(_) => g.iter().map(|v| -v).collect(),
        };
        if !(math::dot(&step, &g) < 0.0) {
            // not a descent direction: gradient step scaled by 1/λ
            step = g.iter().map(|v| -v / model.lambda()).collect();
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..k {
                trial[i] = a[i] + s * step[i];
            }
            let (v, noise) = reduced(model, t, x, mu, &b2ty, &trial);
            gradient(model, t, x, mu, &b2ty, &trial, &mut g_trial);
            let gn = math::norm(&g_trial);
            // near the optimum value changes drown in rounding, so a smaller
            // gradient also counts as progress
            if v < value || (v <= value + noise && gn < gnorm) {
                a.copy_from_slice(&trial);
                g.copy_from_slice(&g_trial);
                value = v;
                gnorm = gn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gnorm <= STATIONARITY_TOL {
        out.copy_from_slice(&a);
        return Ok(());
    }
    Err(Error::MinimizerBudget {
        iterations: MAX_ITERS,
        residual: gnorm,
        last: a,
    })
}

/// `λ^{-1}(|∂_α f(t, x, μ, 0)| + ‖b2(t)‖·|y|)`, an a priori bound on `|α̂|`.
pub fn minimizer_bound(model: &MfgModel, t: f64, x: &[f64], mu: &DiscreteMeasure, y: &[f64]) -> f64 {
    let zero = vec![0.0; model.control_dim()];
    let mut g0 = vec![0.0; model.control_dim()];
    model.df_dalpha(t, x, mu, &zero, &mut g0);
    (math::norm(&g0) + model.b2(t).op_norm() * math::norm(y)) / model.lambda()
}

/// Lipschitz constant of `(x, y) ↦ α̂` for an LQ model:
/// `sup_t ‖(nᵀn)^{-1} b2ᵀ‖` (there is no dependence on `x`).
pub fn lq_minimizer_lipschitz(spec: &LqSpec) -> Result<f64> {
    let mut sup = 0.0_f64;
    for t in spec.lattice_times() {
        let n = spec.n.at(t);
        let gain = n.transpose().matmul(n).solve(&spec.b2.at(t).transpose())?;
        sup = sup.max(gain.op_norm());
    }
    Ok(sup)
}
