//! Analytic reference for linear-quadratic games.
//!
//! With the affine ansatz `Y_t = η_t X_t + χ_t` the adjoint equation splits
//! into a matrix Riccati equation
//!
//! ```text
//! η' = -b1ᵀη - ηb1 + ηBη - mᵀm,   η_T = qᵀq,   B = b2 (nᵀn)^{-1} b2ᵀ
//! ```
//!
//! and a linear two-point system for the mean `x̄` and the offset `χ`:
//!
//! ```text
//! x̄' = (b0 + b1 - Bη) x̄ - Bχ,                  x̄_0 = x0
//! χ' = -(ηb0 + mᵀm̄) x̄ + (ηB - b1ᵀ) χ,          χ_T = qᵀq̄ x̄_T
//! ```
//!
//! The equilibrium cost is the value function `½xᵀηx + χᵀx + κ` at `(0, x0)`,
//! where `κ_T = ½|q̄ x̄_T|²` and
//! `-κ' = χᵀb0x̄ - ½χᵀBχ + ½|m̄x̄|² + ½tr(σᵀησ)`.
//!
//! Internally `η` is integrated with RK4 at a quarter of the output step and
//! `(x̄, χ)` at half of it, so every stage value is available at a node.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fbsde::TimeGrid;
use crate::linalg::Matrix;
use crate::math;
use crate::model::{check_lq_assumptions, LqSpec};
use crate::stats;
use crate::wasserstein::{DiscreteMeasure, MeasureFlow};

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// `η_{t_j}` at every grid node.
    pub eta: Vec<Matrix>,
    pub chi: Vec<Vec<f64>>,
    pub xbar: Vec<Vec<f64>>,
    /// Covariance of the equilibrium state, `Σ' = AΣ + ΣAᵀ + σσᵀ`, `A = b1 - Bη`.
    pub covariance: Vec<Matrix>,
    /// `-(nᵀn)^{-1} b2ᵀ` at every node.
    gains: Vec<Matrix>,
    /// `|χ_T - qᵀq̄ x̄_T|`.
    pub boundary_residual: f64,
    pub cost: f64,
    // η at steps T/(4n) and (x̄, χ) at steps T/(2n), for quadrature
    eta_fine: Vec<Matrix>,
    z_fine: Vec<Vec<f64>>,
}

impl RiccatiSolution {
    /// `η_j x + χ_j`.
    pub fn field_value(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = self.chi[j].clone();
        self.eta[j].mul_vec_add(x, &mut out);
        out
    }

    /// `α̂(t_j, x) = -(nᵀn)^{-1} b2ᵀ (η_j x + χ_j)`.
    pub fn alpha_feedback(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.gains[j].mul_vec(&self.field_value(j, x))
    }

    /// One-dimensional equilibrium flow: `support` equal-mass Gaussian quantile
    /// atoms around `x̄_t` with variance `Σ_t`.
    pub fn gaussian_flow(&self, support: usize) -> Result<MeasureFlow> {
        if self.xbar[0].len() != 1 {
            return Err(Error::Unsupported("gaussian_flow is one-dimensional".into()));
        }
        if support == 0 {
            return Err(Error::invalid("support must be positive"));
        }
        let zs: Vec<f64> = (0..support)
            .map(|i| stats::normal_quantile((i as f64 + 0.5) / support as f64))
            .collect();
        let measures = (0..self.grid.n_nodes())
            .map(|j| {
                let sd = math::sqrt(self.covariance[j][(0, 0)].max(0.0));
                let pts = zs.iter().map(|z| self.xbar[j][0] + sd * z).collect();
                DiscreteMeasure::uniform(1, pts)
            })
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.grid, measures)
    }

    /// Dirac flow at the equilibrium mean path.
    pub fn mean_flow(&self) -> Result<MeasureFlow> {
        MeasureFlow::dirac_path(self.grid, &self.xbar)
    }
}

struct Coefficients<'a> {
    spec: &'a LqSpec,
}

impl Coefficients<'_> {
    fn big_b(&self, t: f64) -> Result<Matrix> {
        let n = self.spec.n.at(t);
        let b2 = self.spec.b2.at(t);
        let nn = n.transpose().matmul(n);
        Ok(b2.matmul(&nn.solve(&b2.transpose())?))
    }

    fn riccati(&self, t: f64, eta: &Matrix) -> Result<Matrix> {
        let b1 = self.spec.b1.at(t);
        let m = self.spec.m.at(t);
        let b = self.big_b(t)?;
        let lin = &b1.transpose().matmul(eta) + &eta.matmul(b1);
        let quad = eta.matmul(&b).matmul(eta);
        Ok(&(&quad - &lin) - &m.transpose().matmul(m))
    }

    /// Generator of `z = (x̄, χ)`.
    fn linear(&self, t: f64, eta: &Matrix) -> Result<Matrix> {
        let d = eta.rows();
        let s = self.spec;
        let b0 = s.b0.at(t);
        let b1 = s.b1.at(t);
        let m = s.m.at(t);
        let mbar = s.mbar.at(t);
        let b = self.big_b(t)?;
        let xx = &(b0 + b1) - &b.matmul(eta);
        let xc = b.scale(-1.0);
        let cx = (&eta.matmul(b0) + &m.transpose().matmul(mbar)).scale(-1.0);
        let cc = &eta.matmul(&b) - &b1.transpose();
        let mut g = Matrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for k in 0..d {
                g[(i, k)] = xx[(i, k)];
                g[(i, d + k)] = xc[(i, k)];
                g[(d + i, k)] = cx[(i, k)];
                g[(d + i, d + k)] = cc[(i, k)];
            }
        }
        Ok(g)
    }

    fn lyapunov(&self, t: f64, eta: &Matrix, cov: &Matrix) -> Result<Matrix> {
        let a = self.spec.b1.at(t) - &self.big_b(t)?.matmul(eta);
        let sig = &self.spec.sigma;
        let s = &(&a.matmul(cov) + &cov.matmul(&a.transpose())) + &sig.matmul(&sig.transpose());
        Ok(s)
    }
}

fn axpy(a: &Matrix, s: f64, k: &Matrix) -> Matrix {
    a + &k.scale(s)
}

/// Solves the Riccati equation and the mean/offset boundary problem on `grid`.
pub fn solve_lq_riccati(spec: &LqSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    let report = check_lq_assumptions(spec);
    if report.blocking_failure() {
        return Err(Error::AssumptionViolation(report));
    }
    let d = spec.dims()?.d;
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::invalid("grid horizon differs from the spec horizon T"));
    }
    let c = Coefficients { spec };
    let n = grid.n_steps();
    let horizon = grid.horizon();
    let quarter = 4 * n;
    let tq = |i: usize| {
        if i == quarter {
            horizon
        } else {
            horizon * i as f64 / quarter as f64
        }
    };

    // η backward, RK4 with step T/(4n)
    let hq = horizon / quarter as f64;
    let mut eta_fine = vec![Matrix::zeros(d, d); quarter + 1];
    eta_fine[quarter] = spec.q.transpose().matmul(&spec.q);
    for i in (0..quarter).rev() {
        let t = tq(i + 1);
        let e = &eta_fine[i + 1];
        let k1 = c.riccati(t, e)?;
        let k2 = c.riccati(t - 0.5 * hq, &axpy(e, -0.5 * hq, &k1))?;
        let k3 = c.riccati(t - 0.5 * hq, &axpy(e, -0.5 * hq, &k2))?;
        let k4 = c.riccati(t - hq, &axpy(e, -hq, &k3))?;
        let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
        let next = axpy(e, -hq / 6.0, &incr).symmetric_part();
        if next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Riccati solution"));
        }
        eta_fine[i] = next;
    }

    // fundamental matrix of z = (x̄, χ), RK4 with step T/(2n)
    let half = 2 * n;
    let hh = horizon / half as f64;
    let th = |i: usize| tq(2 * i);
    let mut phi = vec![Matrix::identity(2 * d); half + 1];
    for i in 0..half {
        let t = th(i);
        let p = &phi[i];
        let (e0, e1, e2) = (&eta_fine[2 * i], &eta_fine[2 * i + 1], &eta_fine[2 * i + 2]);
        let k1 = c.linear(t, e0)?.matmul(p);
        let k2 = c.linear(t + 0.5 * hh, e1)?.matmul(&axpy(p, 0.5 * hh, &k1));
        let k3 = c.linear(t + 0.5 * hh, e1)?.matmul(&axpy(p, 0.5 * hh, &k2));
        let k4 = c.linear(t + hh, e2)?.matmul(&axpy(p, hh, &k3));
        let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
        phi[i + 1] = axpy(p, hh / 6.0, &incr);
    }

    // χ_0 from χ_T = K x̄_T, K = qᵀq̄
    let k = spec.q.transpose().matmul(&spec.qbar);
    let pt = &phi[half];
    let block = |r0: usize, c0: usize| {
        let mut b = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] = pt[(r0 + i, c0 + j)];
            }
        }
        b
    };
    let (pxx, pxc, pcx, pcc) = (block(0, 0), block(0, d), block(d, 0), block(d, d));
    let lhs = &pcc - &k.matmul(&pxc);
    let x0 = Matrix::from_vec(d, 1, spec.x0.clone())?;
    let rhs = (&pcx - &k.matmul(&pxx)).matmul(&x0).scale(-1.0);
    let chi0 = lhs
        .solve(&rhs)
        .map_err(|_| Error::Singular("mean/offset boundary system of the LQ oracle"))?;
    let mut z0 = spec.x0.clone();
    z0.extend_from_slice(chi0.as_slice());
    let z_fine: Vec<Vec<f64>> = phi.iter().map(|p| p.mul_vec(&z0)).collect();

    // covariance forward on the same half grid
    let mut cov_fine = vec![Matrix::zeros(d, d); half + 1];
    for i in 0..half {
        let t = th(i);
        let s = &cov_fine[i];
        let (e0, e1, e2) = (&eta_fine[2 * i], &eta_fine[2 * i + 1], &eta_fine[2 * i + 2]);
        let k1 = c.lyapunov(t, e0, s)?;
        let k2 = c.lyapunov(t + 0.5 * hh, e1, &axpy(s, 0.5 * hh, &k1))?;
        let k3 = c.lyapunov(t + 0.5 * hh, e1, &axpy(s, 0.5 * hh, &k2))?;
        let k4 = c.lyapunov(t + hh, e2, &axpy(s, hh, &k3))?;
        let incr = &(&k1 + &k2.scale(2.0)) + &(&k3.scale(2.0) + &k4);
        cov_fine[i + 1] = axpy(s, hh / 6.0, &incr).symmetric_part();
    }

    let eta: Vec<Matrix> = (0..=n).map(|j| eta_fine[4 * j].clone()).collect();
    let xbar: Vec<Vec<f64>> = (0..=n).map(|j| z_fine[2 * j][..d].to_vec()).collect();
    let chi: Vec<Vec<f64>> = (0..=n).map(|j| z_fine[2 * j][d..].to_vec()).collect();
    let covariance: Vec<Matrix> = (0..=n).map(|j| cov_fine[2 * j].clone()).collect();
    let gains = (0..=n)
        .map(|j| {
            let t = grid.t(j);
            let nm = spec.n.at(t);
            Ok(nm.transpose().matmul(nm).solve(&spec.b2.at(t).transpose())?.scale(-1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let kx = k.mul_vec(&xbar[n]);
    let boundary_residual = math::max_abs(&chi[n].iter().zip(&kx).map(|(a, b)| a - b).collect::<Vec<_>>());

    let mut sol = RiccatiSolution {
        grid,
        eta,
        chi,
        xbar,
        covariance,
        gains,
        boundary_residual,
        cost: 0.0,
        eta_fine,
        z_fine,
    };
    sol.cost = lq_cost(&sol, spec)?;
    Ok(sol)
}

/// Equilibrium cost `½x0ᵀη_0x0 + χ_0ᵀx0 + κ_0`, with the `κ` integral by
/// Simpson's rule on the internal half-step grid.
pub fn lq_cost(sol: &RiccatiSolution, spec: &LqSpec) -> Result<f64> {
    let d = spec.dims()?.d;
    let c = Coefficients { spec };
    let half = sol.z_fine.len() - 1;
    let horizon = sol.grid.horizon();
    let hh = horizon / half as f64;
    let integrand = |i: usize| -> Result<f64> {
        let t = if i == half { horizon } else { i as f64 * hh };
        let eta = &sol.eta_fine[2 * i];
        let xb = &sol.z_fine[i][..d];
        let chi = &sol.z_fine[i][d..];
        let bx = spec.b0.at(t).mul_vec(xb);
        let bchi = c.big_b(t)?.mul_vec(chi);
        let mx = spec.mbar.at(t).mul_vec(xb);
        let noise = spec.sigma.transpose().matmul(eta).matmul(&spec.sigma).trace();
        Ok(math::dot(chi, &bx) - 0.5 * math::dot(chi, &bchi) + 0.5 * math::dot(&mx, &mx) + 0.5 * noise)
    };
    let mut acc = 0.0;
    for i in 0..=half {
        let w = if i == 0 || i == half {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * integrand(i)?;
    }
    let integral = acc * hh / 3.0;
    let xt = spec.qbar.mul_vec(&sol.z_fine[half][..d]);
    let x0 = &spec.x0;
    let eta0x0 = sol.eta_fine[0].mul_vec(x0);
    Ok(0.5 * math::dot(x0, &eta0x0) + math::dot(&sol.z_fine[0][d..], x0) + 0.5 * math::dot(&xt, &xt) + integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarLq;

    pub(crate) fn degenerate(sigma: f64) -> LqSpec {
        ScalarLq {
            q: 1.0,
            qbar: 0.0,
            m: 0.0,
            mbar: 0.0,
            n: 1.0,
            b0: 0.0,
            b1: 0.0,
            b2: 1.0,
            sigma,
            x0: 1.0,
            horizon: 1.0,
        }
        .into()
    }

    fn full() -> LqSpec {
        ScalarLq {
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
            horizon: 1.0,
        }
        .into()
    }

    #[test]
    fn degenerate_closed_form() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let sol = solve_lq_riccati(&degenerate(1.0), grid).unwrap();
        for j in 0..=100 {
            let t = grid.t(j);
            assert!((sol.eta[j][(0, 0)] - 1.0 / (2.0 - t)).abs() < 1e-9);
            assert!(sol.chi[j][0].abs() < 1e-15);
            // x̄' = -η x̄ gives x̄_t = x0 (2 - t) / 2
            assert!((sol.xbar[j][0] - (2.0 - t) / 2.0).abs() < 1e-9);
        }
        let ln2 = core::f64::consts::LN_2;
        assert!((sol.cost - (0.25 + 0.5 * ln2)).abs() < 1e-9);
        let sol0 = solve_lq_riccati(&degenerate(0.0), grid).unwrap();
        assert!((sol0.cost - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_costs() {
        let mut s = degenerate(1.0);
        s.q = Matrix::scalar(0.0);
        let sol = solve_lq_riccati(&s, TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert!(sol.eta.iter().all(|e| e[(0, 0)] == 0.0));
        assert!(sol.xbar.iter().all(|x| x[0] == 1.0));
        assert_eq!(sol.cost, 0.0);
        assert_eq!(sol.alpha_feedback(3, &[2.0]), vec![0.0]);
    }

    #[test]
    fn full_spec_boundary_and_refinement() {
        let spec = full();
        let a = solve_lq_riccati(&spec, TimeGrid::new(1.0, 100).unwrap()).unwrap();
        assert!(a.boundary_residual <= 1e-10);
        // η' = η² - 1 with η_T = 1 stays at 1
        assert!(a.eta.iter().all(|e| (e[(0, 0)] - 1.0).abs() < 1e-14));
        let b = solve_lq_riccati(&spec, TimeGrid::new(1.0, 200).unwrap()).unwrap();
        for j in 0..=100 {
            assert!((a.xbar[j][0] - b.xbar[2 * j][0]).abs() < 1e-8);
            assert!((a.chi[j][0] - b.chi[2 * j][0]).abs() < 1e-8);
        }
        assert!((a.cost - b.cost).abs() < 1e-8);
    }

    #[test]
    fn fourth_order_self_convergence() {
        let spec = full();
        let chi0 = |n: usize| solve_lq_riccati(&spec, TimeGrid::new(1.0, n).unwrap()).unwrap().chi[0][0];
        let (c1, c2, c3) = (chi0(2), chi0(4), chi0(8));
        let ratio = (c1 - c2) / (c2 - c3);
        assert!((ratio - 16.0).abs() <= 0.3 * 16.0, "ratio {ratio}");
    }

    #[test]
    fn covariance_of_degenerate_spec() {
        // Σ' = -2ηΣ + 1 with η = 1/(2-t): Σ_t = (2-t)² ∫_0^t (2-s)^{-2} ds = t(2-t)/2
        let sol = solve_lq_riccati(&degenerate(1.0), TimeGrid::new(1.0, 50).unwrap()).unwrap();
        for (j, cov) in sol.covariance.iter().enumerate() {
            let t = j as f64 / 50.0;
            assert!((cov[(0, 0)] - t * (2.0 - t) / 2.0).abs() < 1e-9);
        }
    }
}
