//! Game instances: coefficients, costs and the constants `λ`, `c_L`.
//!
//! A model is a bundle of pure callables. The drift is always affine,
//! `b(t, x, μ, α) = b0(t, μ) + b1(t) x + b2(t) α`, with constant volatility
//! `σ`. Linear-quadratic models are built from an [`LqSpec`] and carry it along,
//! which lets the Hamiltonian minimizer use its closed form.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng::{streams, StreamRng};
use crate::wasserstein::DiscreteMeasure;

pub type MeanFieldDriftFn = Arc<dyn Fn(f64, &DiscreteMeasure, &mut [f64]) + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], &DiscreteMeasure, &[f64]) -> f64 + Send + Sync>;
pub type RunningGradFn = Arc<dyn Fn(f64, &[f64], &DiscreteMeasure, &[f64], &mut [f64]) + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64], &DiscreteMeasure) -> f64 + Send + Sync>;
pub type TerminalGradFn = Arc<dyn Fn(&[f64], &DiscreteMeasure, &mut [f64]) + Send + Sync>;

/// How the coefficients look at the measure argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureDependence {
    None,
    MeanOnly,
    Full,
}

#[derive(Clone)]
pub struct MfgModel {
    horizon: f64,
    d: usize,
    k: usize,
    m: usize,
    x0: Vec<f64>,
    sigma: Matrix,
    b0: MeanFieldDriftFn,
    b1: MatrixFn,
    b2: MatrixFn,
    f: RunningCostFn,
    df_dx: RunningGradFn,
    df_dalpha: RunningGradFn,
    g: TerminalCostFn,
    dg_dx: TerminalGradFn,
    lambda: f64,
    c_l: f64,
    dependence: MeasureDependence,
    lq: Option<Arc<LqSpec>>,
}

impl fmt::Debug for MfgModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MfgModel")
            .field("horizon", &self.horizon)
            .field("d", &self.d)
            .field("k", &self.k)
            .field("m", &self.m)
            .field("x0", &self.x0)
            .field("lambda", &self.lambda)
            .field("c_l", &self.c_l)
            .field("dependence", &self.dependence)
            .field("lq", &self.lq.is_some())
            .finish_non_exhaustive()
    }
}

/// Time-only coefficients frozen at one instant.
#[derive(Clone, Debug)]
pub struct CoefficientSlice {
    pub t: f64,
    pub b1: Matrix,
    pub b2: Matrix,
    /// `(nᵀn)^{-1} b2ᵀ` for linear-quadratic models: `α̂ = -gain · y`.
    pub lq_gain: Option<Matrix>,
}

impl MfgModel {
    pub fn builder(horizon: f64, x0: Vec<f64>, sigma: Matrix, control_dim: usize) -> MfgModelBuilder {
        MfgModelBuilder {
            horizon,
            x0,
            sigma,
            k: control_dim,
            b0: None,
            b1: None,
            b2: None,
            running: None,
            terminal: None,
            lambda: None,
            c_l: None,
            dependence: MeasureDependence::Full,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn control_dim(&self) -> usize {
        self.k
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c_l(&self) -> f64 {
        self.c_l
    }

    pub fn dependence(&self) -> MeasureDependence {
        self.dependence
    }

    pub fn lq_spec(&self) -> Option<&LqSpec> {
        self.lq.as_deref()
    }

    #[inline]
    pub fn b0(&self, t: f64, mu: &DiscreteMeasure, out: &mut [f64]) {
        (self.b0)(t, mu, out)
    }

    pub fn b1(&self, t: f64) -> Matrix {
        (self.b1)(t)
    }

    pub fn b2(&self, t: f64) -> Matrix {
        (self.b2)(t)
    }

    #[inline]
    pub fn f(&self, t: f64, x: &[f64], mu: &DiscreteMeasure, alpha: &[f64]) -> f64 {
        (self.f)(t, x, mu, alpha)
    }

    #[inline]
    pub fn df_dx(&self, t: f64, x: &[f64], mu: &DiscreteMeasure, alpha: &[f64], out: &mut [f64]) {
        (self.df_dx)(t, x, mu, alpha, out)
    }

    #[inline]
    pub fn df_dalpha(&self, t: f64, x: &[f64], mu: &DiscreteMeasure, alpha: &[f64], out: &mut [f64]) {
        (self.df_dalpha)(t, x, mu, alpha, out)
    }

    #[inline]
    pub fn g(&self, x: &[f64], mu: &DiscreteMeasure) -> f64 {
        (self.g)(x, mu)
    }

    #[inline]
    pub fn dg_dx(&self, x: &[f64], mu: &DiscreteMeasure, out: &mut [f64]) {
        (self.dg_dx)(x, mu, out)
    }

    pub fn slice(&self, t: f64) -> CoefficientSlice {
        let b1 = self.b1(t);
        let b2 = self.b2(t);
        let lq_gain = self.lq.as_ref().and_then(|spec| {
            let n = spec.n.at(t);
            let nn = n.transpose().matmul(n);
            nn.solve(&b2.transpose()).ok()
        });
        CoefficientSlice { t, b1, b2, lq_gain }
    }

    /// `out = b0 + b1·x + b2·α` with `b0 = b0(t, μ)` precomputed.
    #[inline]
    pub fn drift_with(&self, slice: &CoefficientSlice, b0: &[f64], x: &[f64], alpha: &[f64], out: &mut [f64]) {
        out.copy_from_slice(b0);
        slice.b1.mul_vec_add(x, out);
        slice.b2.mul_vec_add(alpha, out);
    }

    /// Runs the randomized spot checks of gradients, `α`-convexity and
    /// coefficient bounds.
    pub fn sampled_checks(&self, seed: u64, points: usize) -> SampledChecks {
        SampledChecks {
            gradient_error: self.gradient_check(seed, points),
            convexity_violation: self.convexity_check(seed, points),
            bound_excess: self.bound_check(257),
        }
    }

    fn random_measure(&self, rng: &mut StreamRng) -> DiscreteMeasure {
        let atoms = 5;
        let pts = (0..atoms * self.d).map(|_| 2.0 * rng.normal()).collect();
        DiscreteMeasure::uniform(self.d, pts).expect("non-empty")
    }

    fn random_vec(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * rng.normal()).collect()
    }

    /// Largest relative discrepancy `|fd - grad| / max(1, |grad|)` between the
    /// analytic gradients and central differences of `f` and `g`.
    pub fn gradient_check(&self, seed: u64, points: usize) -> f64 {
        let mut rng = StreamRng::new(seed, streams::CHECKS, &[0]);
        let mut worst = 0.0_f64;
        let mut grad_x = vec![0.0; self.d];
        let mut grad_a = vec![0.0; self.k];
        for _ in 0..points {
            let t = self.horizon * rng.uniform();
            let x = Self::random_vec(&mut rng, self.d, 2.0);
            let a = Self::random_vec(&mut rng, self.k, 2.0);
            let mu = self.random_measure(&mut rng);
            self.df_dx(t, &x, &mu, &a, &mut grad_x);
            self.df_dalpha(t, &x, &mu, &a, &mut grad_a);
            for i in 0..self.d {
                let fd = central_diff(&x, i, |xp| self.f(t, xp, &mu, &a));
                worst = worst.max(rel_err(fd, grad_x[i]));
            }
            for i in 0..self.k {
                let fd = central_diff(&a, i, |ap| self.f(t, &x, &mu, ap));
                worst = worst.max(rel_err(fd, grad_a[i]));
            }
            self.dg_dx(&x, &mu, &mut grad_x);
            for i in 0..self.d {
                let fd = central_diff(&x, i, |xp| self.g(xp, &mu));
                worst = worst.max(rel_err(fd, grad_x[i]));
            }
        }
        worst
    }

    /// Largest violation of
    /// `f(α') - f(α) - <α' - α, ∂_α f(α)> >= λ|α' - α|² - 1e-9` (0 when none).
    pub fn convexity_check(&self, seed: u64, points: usize) -> f64 {
        let mut rng = StreamRng::new(seed, streams::CHECKS, &[1]);
        let mut worst = 0.0_f64;
        let mut grad = vec![0.0; self.k];
        for _ in 0..points {
            let t = self.horizon * rng.uniform();
            let x = Self::random_vec(&mut rng, self.d, 2.0);
            let a = Self::random_vec(&mut rng, self.k, 2.0);
            let a2 = Self::random_vec(&mut rng, self.k, 2.0);
            let mu = self.random_measure(&mut rng);
            self.df_dalpha(t, &x, &mu, &a, &mut grad);
            let diff: Vec<f64> = a2.iter().zip(&a).map(|(p, q)| p - q).collect();
            let gap = self.f(t, &x, &mu, &a2) - self.f(t, &x, &mu, &a) - math::dot(&diff, &grad);
            let need = self.lambda * math::dot(&diff, &diff) - 1e-9;
            worst = worst.max(need - gap);
        }
        worst
    }

    /// Largest excess of `‖b1(t)‖ + ‖b2(t)‖` and `|b0(t, δ_0)|` over `c_L` on a
    /// uniform time lattice (0 when within bounds).
    pub fn bound_check(&self, lattice: usize) -> f64 {
        let origin = DiscreteMeasure::dirac(&vec![0.0; self.d]);
        let mut b0 = vec![0.0; self.d];
        let mut worst = 0.0_f64;
        for i in 0..lattice {
            let t = self.horizon * i as f64 / (lattice - 1).max(1) as f64;
            let s = self.b1(t).op_norm() + self.b2(t).op_norm();
            self.b0(t, &origin, &mut b0);
            worst = worst.max(s - self.c_l).max(math::norm(&b0) - self.c_l);
        }
        worst
    }
}

fn central_diff(at: &[f64], i: usize, mut eval: impl FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-5 * at[i].abs().max(1.0);
    let mut p = at.to_vec();
    p[i] = at[i] + h;
    let up = eval(&p);
    p[i] = at[i] - h;
    let down = eval(&p);
    (up - down) / (2.0 * h)
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

/// Outcome of [`MfgModel::sampled_checks`]; every field is 0 for a clean model
/// except the gradient error, which is a relative discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledChecks {
    pub gradient_error: f64,
    pub convexity_violation: f64,
    pub bound_excess: f64,
}

impl SampledChecks {
    pub fn passed(&self, gradient_tol: f64) -> bool {
        self.gradient_error <= gradient_tol && self.convexity_violation <= 0.0 && self.bound_excess <= 0.0
    }
}

pub struct MfgModelBuilder {
    horizon: f64,
    x0: Vec<f64>,
    sigma: Matrix,
    k: usize,
    b0: Option<MeanFieldDriftFn>,
    b1: Option<MatrixFn>,
    b2: Option<MatrixFn>,
    running: Option<(RunningCostFn, RunningGradFn, RunningGradFn)>,
    terminal: Option<(TerminalCostFn, TerminalGradFn)>,
    lambda: Option<f64>,
    c_l: Option<f64>,
    dependence: MeasureDependence,
}

impl MfgModelBuilder {
    pub fn b0(mut self, f: impl Fn(f64, &DiscreteMeasure, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.b0 = Some(Arc::new(f));
        self
    }

    pub fn b1(mut self, f: impl Fn(f64) -> Matrix + Send + Sync + 'static) -> Self {
        self.b1 = Some(Arc::new(f));
        self
    }

    pub fn b2(mut self, f: impl Fn(f64) -> Matrix + Send + Sync + 'static) -> Self {
        self.b2 = Some(Arc::new(f));
        self
    }

    pub fn running_cost(
        mut self,
        f: impl Fn(f64, &[f64], &DiscreteMeasure, &[f64]) -> f64 + Send + Sync + 'static,
        df_dx: impl Fn(f64, &[f64], &DiscreteMeasure, &[f64], &mut [f64]) + Send + Sync + 'static,
        df_dalpha: impl Fn(f64, &[f64], &DiscreteMeasure, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.running = Some((Arc::new(f), Arc::new(df_dx), Arc::new(df_dalpha)));
        self
    }

    pub fn terminal_cost(
        mut self,
        g: impl Fn(&[f64], &DiscreteMeasure) -> f64 + Send + Sync + 'static,
        dg_dx: impl Fn(&[f64], &DiscreteMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.terminal = Some((Arc::new(g), Arc::new(dg_dx)));
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn c_l(mut self, c_l: f64) -> Self {
        self.c_l = Some(c_l);
        self
    }

    pub fn dependence(mut self, dependence: MeasureDependence) -> Self {
        self.dependence = dependence;
        self
    }

    pub fn build(self) -> Result<MfgModel> {
        let d = self.x0.len();
        let m = self.sigma.cols();
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon T must be positive"));
        }
        if d == 0 || self.k == 0 || m == 0 {
            return Err(Error::invalid("dimensions d, k, m must be at least 1"));
        }
        if self.sigma.rows() != d {
            return Err(Error::DimensionMismatch {
                what: "sigma rows",
                expected: d,
                got: self.sigma.rows(),
            });
        }
        let lambda = self.lambda.ok_or_else(|| Error::invalid("lambda is required"))?;
        let c_l = self.c_l.ok_or_else(|| Error::invalid("c_L is required"))?;
        if !(lambda > 0.0) || !(c_l > 0.0) {
            return Err(Error::invalid("lambda and c_L must be positive"));
        }
        let (f, df_dx, df_dalpha) = self.running.ok_or_else(|| Error::invalid("running cost is required"))?;
        let (g, dg_dx) = self
            .terminal
            .ok_or_else(|| Error::invalid("terminal cost is required"))?;
        let b2 = self.b2.ok_or_else(|| Error::invalid("b2 is required"))?;
        let k = self.k;
        let b2_0 = b2(0.0);
        if b2_0.shape() != (d, k) {
            return Err(Error::invalid(format!(
                "b2 must be {d}x{k}, got {}x{}",
                b2_0.rows(),
                b2_0.cols()
            )));
        }
        let b1: MatrixFn = self.b1.unwrap_or_else(|| Arc::new(move |_| Matrix::zeros(d, d)));
        if b1(0.0).shape() != (d, d) {
            return Err(Error::invalid("b1 must be d x d"));
        }
        let b0: MeanFieldDriftFn = self
            .b0
            .unwrap_or_else(|| Arc::new(|_, _, out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)));
        Ok(MfgModel {
            horizon: self.horizon,
            d,
            k,
            m,
            x0: self.x0,
            sigma: self.sigma,
            b0,
            b1,
            b2,
            f,
            df_dx,
            df_dalpha,
            g,
            dg_dx,
            lambda,
            c_l,
            dependence: self.dependence,
            lq: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Linear-quadratic specialization
// ---------------------------------------------------------------------------

/// Piecewise-constant matrix-valued function of time.
///
/// `values[i]` holds on `[breakpoints[i-1], breakpoints[i])`, with the first
/// value before the first breakpoint and the last one after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Coef {
    breakpoints: Vec<f64>,
    values: Vec<Matrix>,
}

impl Coef {
    pub fn constant(value: Matrix) -> Self {
        Coef {
            breakpoints: Vec::new(),
            values: vec![value],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Matrix::scalar(v))
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<Matrix>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::invalid(
                "piecewise coefficient needs one more value than breakpoints",
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::invalid("piecewise values must share one shape"));
        }
        Ok(Coef { breakpoints, values })
    }

    #[inline]
    pub fn at(&self, t: f64) -> &Matrix {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        &self.values[idx]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CoefRepr {
    Constant(Matrix),
    Piecewise { breakpoints: Vec<f64>, values: Vec<Matrix> },
}

impl Serialize for Coef {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        if self.breakpoints.is_empty() {
            CoefRepr::Constant(self.values[0].clone()).serialize(s)
        } else {
            CoefRepr::Piecewise {
                breakpoints: self.breakpoints.clone(),
                values: self.values.clone(),
            }
            .serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Coef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        match CoefRepr::deserialize(d)? {
            CoefRepr::Constant(m) => Ok(Coef::constant(m)),
            CoefRepr::Piecewise { breakpoints, values } => {
                Coef::piecewise(breakpoints, values).map_err(serde::de::Error::custom)
            }
        }
    }
}

mod scalar_or_vec {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Scalar(f64),
        Vector(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> core::result::Result<S::Ok, S::Error> {
        if v.len() == 1 {
            Repr::Scalar(v[0]).serialize(s)
        } else {
            Repr::Vector(v.to_vec()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<Vec<f64>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Scalar(x) => vec![x],
            Repr::Vector(v) => v,
        })
    }
}

/// Linear-quadratic game data:
/// `b0(t, μ) = b0(t)·mean(μ)`, `g = ½|q x + qbar·mean(μ)|²`,
/// `f = ½|m(t) x + mbar(t)·mean(μ)|² + ½|n(t) α|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqSpec {
    pub b0: Coef,
    pub b1: Coef,
    pub b2: Coef,
    pub m: Coef,
    pub mbar: Coef,
    pub n: Coef,
    pub q: Matrix,
    pub qbar: Matrix,
    pub sigma: Matrix,
    #[serde(with = "scalar_or_vec")]
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Scalar (`d = k = m = 1`) linear-quadratic data with constant coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarLq {
    pub q: f64,
    pub qbar: f64,
    pub m: f64,
    pub mbar: f64,
    pub n: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub sigma: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl ScalarLq {
    /// `q = 1, q̄ = 0.5, m = 1, m̄ = 0.5, n = 1, b0 = b1 = 0, b2 = 1, σ = 1,
    /// x0 = 1, T = 1`.
    pub fn reference() -> Self {
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
    }

    /// Measure-free control of the terminal position only, with
    /// `η_t = 1/(2 - t)`.
    pub fn terminal_only() -> Self {
        ScalarLq {
            qbar: 0.0,
            m: 0.0,
            mbar: 0.0,
            ..Self::reference()
        }
    }
}

impl From<ScalarLq> for LqSpec {
    fn from(s: ScalarLq) -> Self {
        LqSpec {
            b0: Coef::scalar(s.b0),
            b1: Coef::scalar(s.b1),
            b2: Coef::scalar(s.b2),
            m: Coef::scalar(s.m),
            mbar: Coef::scalar(s.mbar),
            n: Coef::scalar(s.n),
            q: Matrix::scalar(s.q),
            qbar: Matrix::scalar(s.qbar),
            sigma: Matrix::scalar(s.sigma),
            x0: vec![s.x0],
            horizon: s.horizon,
        }
    }
}

/// Dimensions `(d, k, m)` of an LQ spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LqDims {
    pub d: usize,
    pub k: usize,
    pub m: usize,
}

impl LqSpec {
    pub fn dims(&self) -> Result<LqDims> {
        let d = self.x0.len();
        let k = self.n.shape().0;
        let m = self.sigma.cols();
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be {}x{}, got {}x{}",
                    want.0, want.1, got.0, got.1
                )))
            }
        };
        if d == 0 {
            return Err(Error::invalid("x0 must be non-empty"));
        }
        expect("b0", self.b0.shape(), (d, d))?;
        expect("b1", self.b1.shape(), (d, d))?;
        expect("b2", self.b2.shape(), (d, k))?;
        expect("m", self.m.shape(), (d, d))?;
        expect("mbar", self.mbar.shape(), (d, d))?;
        expect("n", self.n.shape(), (k, k))?;
        expect("q", self.q.shape(), (d, d))?;
        expect("qbar", self.qbar.shape(), (d, d))?;
        expect("sigma", self.sigma.shape(), (d, m))?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("T must be positive"));
        }
        Ok(LqDims { d, k, m })
    }

    /// Sample times for the lattice checks: 257 uniform points plus every
    /// breakpoint inside `[0, T]`.
    pub fn lattice_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = (0..=256).map(|i| self.horizon * i as f64 / 256.0).collect();
        for c in [&self.b0, &self.b1, &self.b2, &self.m, &self.mbar, &self.n] {
            ts.extend(
                c.breakpoints()
                    .iter()
                    .copied()
                    .filter(|&b| b >= 0.0 && b <= self.horizon),
            );
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Smallest eigenvalue of `n(t)ᵀn(t)` over the lattice.
    pub fn min_control_curvature(&self) -> f64 {
        self.lattice_times()
            .iter()
            .map(|&t| {
                let n = self.n.at(t);
                n.transpose().matmul(n).sym_eigenvalues()[0]
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `c_L` for the LQ model: the largest of `sup(‖b1‖ + ‖b2‖)`, `sup‖b0‖`
    /// and the Lipschitz constants of `∂_x f`, `∂_α f`, `∂_x g`.
    pub fn lipschitz_constant(&self) -> f64 {
        let mut c = 0.0_f64;
        for t in self.lattice_times() {
            let m = self.m.at(t);
            let mt = m.transpose();
            let n = self.n.at(t);
            c = c
                .max(self.b1.at(t).op_norm() + self.b2.at(t).op_norm())
                .max(self.b0.at(t).op_norm())
                .max(mt.matmul(m).op_norm() + mt.matmul(self.mbar.at(t)).op_norm())
                .max(n.transpose().matmul(n).op_norm());
        }
        let qt = self.q.transpose();
        c.max(qt.matmul(&self.q).op_norm() + qt.matmul(&self.qbar).op_norm())
            .max(f64::MIN_POSITIVE)
    }
}

/// One decidable condition and its verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub passed: bool,
    /// Failure prevents the solver from running.
    pub blocking: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub conditions: Vec<Condition>,
    /// Strong convexity constant in `x`, when positive. Informational only.
    pub gamma: Option<f64>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn blocking_failure(&self) -> bool {
        self.conditions.iter().any(|c| c.blocking && !c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.conditions
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn condition(&self, prefix: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name.starts_with(prefix))
    }
}

const PSD_TOL: f64 = 1e-12;

pub fn check_lq_assumptions(spec: &LqSpec) -> AssumptionReport {
    let mut conditions = Vec::new();
    if let Err(e) = spec.dims() {
        conditions.push(Condition {
            name: "shapes".into(),
            passed: false,
            blocking: true,
            detail: format!("{e}"),
        });
        return AssumptionReport {
            conditions,
            gamma: None,
        };
    }
    let times = spec.lattice_times();

    let qq = spec.qbar.transpose().matmul(&spec.q).sym_eigenvalues()[0];
    conditions.push(Condition {
        name: "weak mean reversion, terminal: qbar^T q >= 0".into(),
        passed: qq >= -PSD_TOL,
        blocking: false,
        detail: format!("smallest eigenvalue of sym(qbar^T q) = {qq:.6e}"),
    });

    let mm = times
        .iter()
        .map(|&t| spec.mbar.at(t).transpose().matmul(spec.m.at(t)).sym_eigenvalues()[0])
        .fold(f64::INFINITY, f64::min);
    conditions.push(Condition {
        name: "weak mean reversion, running: mbar(t)^T m(t) >= 0".into(),
        passed: mm >= -PSD_TOL,
        blocking: false,
        detail: format!("smallest eigenvalue of sym(mbar^T m) over the lattice = {mm:.6e}"),
    });

    let curvature = spec.min_control_curvature();
    let scale = times
        .iter()
        .map(|&t| spec.n.at(t).max_abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    conditions.push(Condition {
        name: "strict convexity: n(t)^T n(t) > 0".into(),
        passed: curvature > PSD_TOL * scale * scale,
        blocking: true,
        detail: format!("smallest eigenvalue of n^T n over the lattice = {curvature:.6e}"),
    });

    let bounded = times.iter().all(|&t| {
        [&spec.b0, &spec.b1, &spec.b2]
            .iter()
            .all(|c| c.at(t).as_slice().iter().all(|v| v.is_finite()))
    });
    conditions.push(Condition {
        name: "bounded drift coefficients b0, b1, b2".into(),
        passed: bounded,
        blocking: false,
        detail: format!("sup norm bound c_L = {:.6e}", spec.lipschitz_constant()),
    });

    let gamma_m = times
        .iter()
        .map(|&t| spec.m.at(t).transpose().matmul(spec.m.at(t)).sym_eigenvalues()[0])
        .fold(f64::INFINITY, f64::min);
    let gamma_q = spec.q.transpose().matmul(&spec.q).sym_eigenvalues()[0];
    let gamma = 0.5 * gamma_m.min(gamma_q);
    AssumptionReport {
        conditions,
        gamma: (gamma > PSD_TOL).then_some(gamma),
    }
}

/// Builds the model `b0(t)·mean(μ)`, `½|q x + qbar·mean(μ)|²`,
/// `½|m x + mbar·mean(μ)|² + ½|n α|²`, with `λ = ½ min_t λ_min(nᵀn)`.
pub fn build_lq_model(spec: &LqSpec) -> Result<MfgModel> {
    let report = check_lq_assumptions(spec);
    if report.blocking_failure() {
        return Err(Error::AssumptionViolation(report));
    }
    let LqDims { d, k, .. } = spec.dims()?;
    let lambda = 0.5 * spec.min_control_curvature();
    let c_l = spec.lipschitz_constant();
    let measure_free = [&spec.b0, &spec.mbar]
        .iter()
        .all(|c| c.values().iter().all(|v| v.max_abs() == 0.0))
        && spec.qbar.max_abs() == 0.0;
    let spec = Arc::new(spec.clone());

    let s = spec.clone();
    let b0 = move |t: f64, mu: &DiscreteMeasure, out: &mut [f64]| {
        s.b0.at(t).mul_vec_into(mu.mean(), out);
    };
    let s = spec.clone();
    let b1 = move |t: f64| s.b1.at(t).clone();
    let s = spec.clone();
    let b2 = move |t: f64| s.b2.at(t).clone();

    // r = m x + mbar·mean(μ)
    let residual = move |s: &LqSpec, t: f64, x: &[f64], mu: &DiscreteMeasure| {
        let mut r = vec![0.0; d];
        s.m.at(t).mul_vec_add(x, &mut r);
        s.mbar.at(t).mul_vec_add(mu.mean(), &mut r);
        r
    };
    let s = spec.clone();
    let f = move |t: f64, x: &[f64], mu: &DiscreteMeasure, a: &[f64]| {
        let r = residual(&s, t, x, mu);
        let na = s.n.at(t).mul_vec(a);
        0.5 * math::dot(&r, &r) + 0.5 * math::dot(&na, &na)
    };
    let s = spec.clone();
    let df_dx = move |t: f64, x: &[f64], mu: &DiscreteMeasure, _a: &[f64], out: &mut [f64]| {
        let r = residual(&s, t, x, mu);
        out.iter_mut().for_each(|o| *o = 0.0);
        s.m.at(t).tr_mul_vec_add(&r, out);
    };
    let s = spec.clone();
    let df_dalpha = move |t: f64, _x: &[f64], _mu: &DiscreteMeasure, a: &[f64], out: &mut [f64]| {
        let n = s.n.at(t);
        let na = n.mul_vec(a);
        out.iter_mut().for_each(|o| *o = 0.0);
        n.tr_mul_vec_add(&na, out);
    };
    let terminal_residual = |s: &LqSpec, x: &[f64], mu: &DiscreteMeasure| {
        let mut r = s.q.mul_vec(x);
        s.qbar.mul_vec_add(mu.mean(), &mut r);
        r
    };
    let s = spec.clone();
    let g = move |x: &[f64], mu: &DiscreteMeasure| {
        let r = terminal_residual(&s, x, mu);
        0.5 * math::dot(&r, &r)
    };
    let s = spec.clone();
    let dg_dx = move |x: &[f64], mu: &DiscreteMeasure, out: &mut [f64]| {
        let r = terminal_residual(&s, x, mu);
        out.iter_mut().for_each(|o| *o = 0.0);
        s.q.tr_mul_vec_add(&r, out);
    };

    let mut model = MfgModel::builder(spec.horizon, spec.x0.clone(), spec.sigma.clone(), k)
        .b0(b0)
        .b1(b1)
        .b2(b2)
        .running_cost(f, df_dx, df_dalpha)
        .terminal_cost(g, dg_dx)
        .lambda(lambda)
        .c_l(c_l)
        .dependence(if measure_free {
            MeasureDependence::None
        } else {
            MeasureDependence::MeanOnly
        })
        .build()?;
    model.lq = Some(spec);
    Ok(model)
}
