use alloc::vec;
use alloc::vec::Vec;

use super::field::DecouplingField;
use super::TimeGrid;
use crate::error::{check_dim, Error, Result};
use crate::exec::{chunks, Executor};
use crate::hamiltonian::minimize_into;
use crate::math;
use crate::model::{CoefficientSlice, MfgModel};
use crate::rng::{streams, StreamRng};
use crate::stats::{pairwise_sum, Estimate};
use crate::wasserstein::{DiscreteMeasure, MeasureFlow};

/// Feedback rule `(t_j, x) ↦ α`.
pub trait Policy: Sync {
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Writes `u(t_j, x)` when the policy comes from a decoupling field.
    fn adjoint(&self, _j: usize, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// `α̂(t_j, x, μ_j, u(t_j, x))`.
pub struct EquilibriumPolicy<'a> {
    model: &'a MfgModel,
    flow: &'a MeasureFlow,
    field: &'a DecouplingField,
    slices: Vec<CoefficientSlice>,
}

impl<'a> EquilibriumPolicy<'a> {
    pub fn new(model: &'a MfgModel, flow: &'a MeasureFlow, field: &'a DecouplingField) -> Result<Self> {
        if flow.grid() != &field.grid {
            return Err(Error::invalid("flow and field live on different grids"));
        }
        check_dim("field dimension", model.state_dim(), field.dim())?;
        check_dim("flow dimension", model.state_dim(), flow.dim())?;
        let slices = flow.grid().times().map(|t| model.slice(t)).collect();
        Ok(EquilibriumPolicy {
            model,
            flow,
            field,
            slices,
        })
    }
}

impl Policy for EquilibriumPolicy<'_> {
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut y = [0.0; 2];
        let y = &mut y[..self.model.state_dim()];
        self.field.eval(j, x, y);
        minimize_into(self.model, &self.slices[j], x, self.flow.at(j), y, out)
    }

    fn adjoint(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        self.field.eval(j, x, out);
        true
    }
}

/// `factor · inner`.
pub struct ScaledPolicy<P> {
    pub inner: P,
    pub factor: f64,
}

impl<P: Policy> Policy for ScaledPolicy<P> {
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.control(j, x, out)?;
        out.iter_mut().for_each(|a| *a *= self.factor);
        Ok(())
    }
}

pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn control(&self, _j: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.0);
        Ok(())
    }
}

/// Any closure `(j, x, out)`.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.0)(j, x, out);
        Ok(())
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).control(j, x, out)
    }

    fn adjoint(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        (**self).adjoint(j, x, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSpec {
    pub n_particles: usize,
    /// Particle `p` draws its noise from stream `("forward", [p])` under this seed.
    pub seed: u64,
    /// Start every particle here instead of the model's `x0`.
    pub x0: Option<Vec<f64>>,
    pub record_adjoint: bool,
    /// Antithetic pairs: particles `2i` and `2i+1` share stream `("forward", [i])`
    /// with opposite signs. Needs an even particle count.
    pub antithetic: bool,
}

impl SimulationSpec {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        SimulationSpec {
            n_particles,
            seed,
            x0: None,
            record_adjoint: false,
            antithetic: false,
        }
    }
}

/// Euler–Maruyama paths, stored particle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dim: usize,
    pub control_dim: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub stream: &'static str,
    /// Particles come in antithetic pairs; estimates then average within pairs.
    pub antithetic: bool,
    states: Vec<f64>,
    controls: Vec<f64>,
    adjoints: Option<Vec<f64>>,
}

impl PathEnsemble {
    #[inline]
    pub fn state(&self, p: usize, j: usize) -> &[f64] {
        let off = (p * self.grid.n_nodes() + j) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// Control applied on `[t_j, t_{j+1})`, `j < n_steps`.
    #[inline]
    pub fn control(&self, p: usize, j: usize) -> &[f64] {
        let off = (p * self.grid.n_steps() + j) * self.control_dim;
        &self.controls[off..off + self.control_dim]
    }

    pub fn adjoint(&self, p: usize, j: usize) -> Option<&[f64]> {
        let off = (p * self.grid.n_nodes() + j) * self.dim;
        self.adjoints.as_ref().map(|a| &a[off..off + self.dim])
    }

    /// Component `c` of every particle at node `j`.
    pub fn samples(&self, j: usize, c: usize) -> Vec<f64> {
        (0..self.n_particles).map(|p| self.state(p, j)[c]).collect()
    }

    pub fn mean_estimate(&self, j: usize, c: usize) -> Estimate {
        self.estimate(&self.samples(j, c))
    }

    /// Mean of one value per particle, with a standard error that accounts
    /// for antithetic pairing.
    pub fn estimate(&self, per_particle: &[f64]) -> Estimate {
        if self.antithetic {
            let pairs: Vec<f64> = per_particle.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
            Estimate::from_samples(&pairs)
        } else {
            Estimate::from_samples(per_particle)
        }
    }

    pub fn mean_path(&self) -> Vec<Vec<f64>> {
        (0..self.grid.n_nodes())
            .map(|j| {
                (0..self.dim)
                    .map(|c| pairwise_sum(&self.samples(j, c)) / self.n_particles as f64)
                    .collect()
            })
            .collect()
    }

    /// Componentwise sample variance at every node.
    pub fn variance_path(&self) -> Vec<Vec<f64>> {
        (0..self.grid.n_nodes())
            .map(|j| {
                (0..self.dim)
                    .map(|c| {
                        let xs = self.samples(j, c);
                        let n = xs.len() as f64;
                        let mean = pairwise_sum(&xs) / n;
                        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
                        pairwise_sum(&sq) / (n - 1.0).max(1.0)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn empirical_measure(&self, j: usize) -> DiscreteMeasure {
        let pts = (0..self.n_particles)
            .flat_map(|p| self.state(p, j).iter().copied())
            .collect();
        DiscreteMeasure::uniform(self.dim, pts).expect("ensemble is non-empty")
    }

    /// Empirical law at every node, thinned to `support` atoms.
    pub fn empirical_flow(&self, support: usize, seed: u64) -> Result<MeasureFlow> {
        let measures = (0..self.grid.n_nodes())
            .map(|j| {
                let mut rng = StreamRng::new(seed, streams::THIN, &[j as u64]);
                self.empirical_measure(j).thin(support, &mut rng)
            })
            .collect();
        MeasureFlow::new(self.grid, measures)
    }
}

/// One Euler–Maruyama step `x + (b0 + b1 x + b2 α)Δ + σ·(√Δ ξ)`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_step(
    model: &MfgModel,
    slice: &CoefficientSlice,
    b0: &[f64],
    x: &[f64],
    alpha: &[f64],
    scaled_noise: &[f64],
    dt: f64,
    drift: &mut [f64],
    out: &mut [f64],
) {
    model.drift_with(slice, b0, x, alpha, drift);
    for i in 0..x.len() {
        out[i] = x[i] + drift[i] * dt;
    }
    model.sigma().mul_vec_add(scaled_noise, out);
}

const CHUNK: usize = 512;

/// Simulates `n_particles` independent copies of the state under `policy`,
/// with `drift_flow` entering `b0`.
pub fn simulate_controlled<P: Policy, E: Executor>(
    model: &MfgModel,
    drift_flow: &MeasureFlow,
    policy: &P,
    spec: &SimulationSpec,
    exec: &E,
) -> Result<PathEnsemble> {
    let d = model.state_dim();
    let k = model.control_dim();
    let m = model.noise_dim();
    check_dim("flow dimension", d, drift_flow.dim())?;
    if spec.n_particles == 0 {
        return Err(Error::invalid("simulation needs at least one particle"));
    }
    if spec.antithetic && !spec.n_particles.is_multiple_of(2) {
        return Err(Error::invalid("antithetic sampling needs an even particle count"));
    }
    let x0 = spec.x0.as_deref().unwrap_or(model.x0());
    check_dim("initial state", d, x0.len())?;
    let grid = *drift_flow.grid();
    let n = grid.n_steps();
    let nodes = grid.n_nodes();
    let dt = grid.dt();
    let sqdt = math::sqrt(dt);
    let slices: Vec<CoefficientSlice> = grid.times().map(|t| model.slice(t)).collect();
    let b0s: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut b = vec![0.0; d];
            model.b0(grid.t(j), drift_flow.at(j), &mut b);
            b
        })
        .collect();

    let ranges: Vec<_> = chunks(spec.n_particles, CHUNK).collect();
    let parts = exec.map(ranges.len(), |c| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let range = ranges[c].clone();
        let mut states = vec![0.0; range.len() * nodes * d];
        let mut controls = vec![0.0; range.len() * n * k];
        let mut adjoints = if spec.record_adjoint {
            vec![0.0; range.len() * nodes * d]
        } else {
            Vec::new()
        };
        let mut xi = vec![0.0; m];
        let mut drift = vec![0.0; d];
        let mut next = vec![0.0; d];
        for (slot, p) in range.enumerate() {
            let (key, sign) = if spec.antithetic {
                ((p / 2) as u64, if p % 2 == 1 { -sqdt } else { sqdt })
            } else {
                (p as u64, sqdt)
            };
            let mut rng = StreamRng::new(spec.seed, streams::FORWARD, &[key]);
            let base = slot * nodes * d;
            states[base..base + d].copy_from_slice(x0);
            for j in 0..n {
                let x = &states[base + j * d..base + (j + 1) * d];
                let a = &mut controls[(slot * n + j) * k..(slot * n + j + 1) * k];
                policy.control(j, x, a)?;
                if spec.record_adjoint {
                    policy.adjoint(j, x, &mut adjoints[base + j * d..base + (j + 1) * d]);
                }
                rng.fill_normal(&mut xi);
                xi.iter_mut().for_each(|z| *z *= sign);
                euler_step(model, &slices[j], &b0s[j], x, a, &xi, dt, &mut drift, &mut next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("forward simulation"));
                }
                states[base + (j + 1) * d..base + (j + 2) * d].copy_from_slice(&next);
            }
            if spec.record_adjoint {
                let x = &states[base + n * d..base + (n + 1) * d];
                policy.adjoint(n, x, &mut adjoints[base + n * d..base + (n + 1) * d]);
            }
        }
        Ok((states, controls, adjoints))
    });
    let mut states = Vec::with_capacity(spec.n_particles * nodes * d);
    let mut controls = Vec::with_capacity(spec.n_particles * n * k);
    let mut adjoints = Vec::new();
    for part in parts {
        let (s, c, a) = part?;
        states.extend_from_slice(&s);
        controls.extend_from_slice(&c);
        adjoints.extend_from_slice(&a);
    }
    Ok(PathEnsemble {
        grid,
        dim: d,
        control_dim: k,
        n_particles: spec.n_particles,
        seed: spec.seed,
        stream: streams::FORWARD,
        antithetic: spec.antithetic,
        states,
        controls,
        adjoints: spec.record_adjoint.then_some(adjoints),
    })
}

/// Paths under the equilibrium feedback built from `field`, recording
/// `Y = u(t, X_t)`.
pub fn simulate_forward<E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    field: &DecouplingField,
    n_particles: usize,
    seed: u64,
    exec: &E,
) -> Result<PathEnsemble> {
    let policy = EquilibriumPolicy::new(model, flow, field)?;
    let spec = SimulationSpec {
        record_adjoint: true,
        ..SimulationSpec::new(n_particles, seed)
    };
    simulate_controlled(model, flow, &policy, &spec, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::fbsde::LatticeSpec;
    use crate::linalg::Matrix;

    fn driftless() -> MfgModel {
        MfgModel::builder(1.0, vec![0.5], Matrix::scalar(0.8), 1)
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
    fn driftless_paths_are_brownian() {
        let m = driftless();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let flow = MeasureFlow::dirac(grid, &[0.5]);
        let lat = LatticeSpec::centered(&[0.5], 4.0, 0.1).unwrap();
        let field = DecouplingField::from_fn(grid, lat, |_, _, o| o[0] = 0.0).unwrap();
        let paths = simulate_forward(&m, &flow, &field, 4000, 9, &Sequential).unwrap();
        for j in [5, 20] {
            let t = grid.t(j);
            let xs = paths.samples(j, 0);
            let est = Estimate::from_samples(&xs);
            assert!(est.agrees_with(0.5, 3.0), "{est:?}");
            // Var of the sample variance of a Gaussian: 2σ⁴/(n-1)
            let var = paths.variance_path()[j][0];
            let target = 0.64 * t;
            let se = math::sqrt(2.0 / 3999.0) * target;
            assert!((var - target).abs() <= 3.0 * se, "{var} vs {target}");
        }
        assert!(paths.adjoint(3, 7).unwrap()[0] == 0.0);
    }

    #[test]
    fn antithetic_pairs_mirror_each_other() {
        let m = driftless();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let flow = MeasureFlow::dirac(grid, &[0.5]);
        let spec = SimulationSpec {
            antithetic: true,
            ..SimulationSpec::new(6, 2)
        };
        let paths = simulate_controlled(&m, &flow, &ConstantPolicy(vec![0.0]), &spec, &Sequential).unwrap();
        let plain = simulate_controlled(
            &m,
            &flow,
            &ConstantPolicy(vec![0.0]),
            &SimulationSpec::new(3, 2),
            &Sequential,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..=10 {
                let (a, b) = (paths.state(2 * i, j)[0], paths.state(2 * i + 1, j)[0]);
                assert!((a + b - 1.0).abs() < 1e-12);
                assert_eq!(a, plain.state(i, j)[0]);
            }
        }
        let est = paths.mean_estimate(10, 0);
        assert!((est.mean - 0.5).abs() < 1e-12 && est.stderr < 1e-12);
        let odd = SimulationSpec {
            antithetic: true,
            ..SimulationSpec::new(5, 2)
        };
        assert!(simulate_controlled(&m, &flow, &ConstantPolicy(vec![0.0]), &odd, &Sequential).is_err());
    }

    #[test]
    fn same_seed_same_paths() {
        let m = driftless();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let flow = MeasureFlow::dirac(grid, &[0.5]);
        let pol = ConstantPolicy(vec![0.3]);
        let a = simulate_controlled(&m, &flow, &pol, &SimulationSpec::new(700, 1), &Sequential).unwrap();
        let b = simulate_controlled(&m, &flow, &pol, &SimulationSpec::new(700, 1), &Sequential).unwrap();
        assert_eq!(a, b);
        let c = simulate_controlled(&m, &flow, &pol, &SimulationSpec::new(700, 2), &Sequential).unwrap();
        assert_ne!(a.state(0, 10), c.state(0, 10));
    }
}
