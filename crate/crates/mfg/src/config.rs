//! Run configuration. Unknown keys are rejected everywhere.

use std::path::Path;

use anyhow::{bail, Context};
use mfg_core::fbsde::LatticeConfig;
use mfg_core::fixedpoint::FixedPointConfig;
use mfg_core::model::{build_lq_model, MeasureDependence, ScalarLq};
use mfg_core::nplayer::{Deviation, SweepConfig};
use mfg_core::wasserstein::rate::Law1d;
use mfg_core::wasserstein::RateConfig;
use mfg_core::{LqSpec, Matrix, MfgModel, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lq_spec: Option<LqSpec>,
    #[serde(default)]
    pub model: Option<BuiltinModel>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub fixedpoint: FixedPointSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Must equal the model horizon when given.
    #[serde(rename = "T", default)]
    pub horizon: Option<f64>,
    pub n_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointSection {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub n_particles: usize,
    pub support: usize,
    pub lattice: LatticeConfig,
    /// Antithetic noise pairs inside the flow map (even `n_particles` only).
    pub antithetic: bool,
}

impl Default for FixedPointSection {
    fn default() -> Self {
        let d = FixedPointConfig::default();
        FixedPointSection {
            damping: d.damping,
            tolerance: d.tolerance,
            max_iters: d.max_iters,
            n_particles: d.n_particles,
            support: d.support,
            lattice: d.lattice,
            antithetic: d.antithetic,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub nash: NashSection,
    pub chaos: ChaosSection,
    pub rate: RateSection,
    /// Flag the value function when its Lipschitz or growth constant exceeds this.
    pub regularity_cap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationSpec {
    Equilibrium,
    Scaled(f64),
    Zero,
    Constant(Vec<f64>),
    OpenLoop(Vec<Vec<f64>>),
    FrozenBestResponse,
}

impl From<&DeviationSpec> for Deviation {
    fn from(d: &DeviationSpec) -> Self {
        match d {
            DeviationSpec::Equilibrium => Deviation::Equilibrium,
            DeviationSpec::Scaled(c) => Deviation::Scaled(*c),
            DeviationSpec::Zero => Deviation::Zero,
            DeviationSpec::Constant(v) => Deviation::Constant(v.clone()),
            DeviationSpec::OpenLoop(p) => Deviation::OpenLoop(p.clone()),
            DeviationSpec::FrozenBestResponse => Deviation::FrozenBestResponse,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NashSection {
    pub ns: Vec<usize>,
    pub replications: usize,
    pub deviations: Vec<DeviationSpec>,
    pub pilot_replications: usize,
    pub pilot_support: usize,
}

impl Default for NashSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        NashSection {
            ns: vec![16, 64, 256],
            replications: s.replications,
            deviations: vec![
                DeviationSpec::Equilibrium,
                DeviationSpec::Scaled(0.9),
                DeviationSpec::Scaled(1.1),
                DeviationSpec::Zero,
            ],
            pilot_replications: s.pilot_replications,
            pilot_support: s.pilot_support,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub ns: Vec<usize>,
    pub replications: usize,
}

impl Default for ChaosSection {
    fn default() -> Self {
        ChaosSection {
            ns: vec![8, 16, 32, 64, 128, 256, 512],
            replications: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub law: Law1d,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub reference_atoms: usize,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            law: Law1d::Gaussian { mean: 0.0, sd: 1.0 },
            ns: vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
            reps: 100,
            reference_atoms: 100_000,
        }
    }
}

/// Models available by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinModel {
    /// The scalar LQ reference spec.
    ReferenceLq,
    /// Scalar LQ with only a terminal cost on the position.
    TerminalOnlyLq,
    /// `dX = (β mean(μ) + α) dt + σ dW`, `f = ½(x + c mean(μ))² + ½α² + κ log cosh α`,
    /// `g = ½(x + c mean(μ))²`.
    LogCosh {
        #[serde(default = "half")]
        coupling: f64,
        #[serde(default = "half")]
        kappa: f64,
        #[serde(default)]
        mean_drift: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        x0: f64,
        #[serde(rename = "T", default = "one")]
        horizon: f64,
    },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl BuiltinModel {
    fn lq(&self) -> Option<LqSpec> {
        match self {
            BuiltinModel::ReferenceLq => Some(ScalarLq::reference().into()),
            BuiltinModel::TerminalOnlyLq => Some(ScalarLq::terminal_only().into()),
            BuiltinModel::LogCosh { .. } => None,
        }
    }

    fn build(&self) -> mfg_core::Result<MfgModel> {
        let BuiltinModel::LogCosh {
            coupling: c,
            kappa,
            mean_drift,
            sigma,
            x0,
            horizon,
        } = *self
        else {
            return build_lq_model(&self.lq().expect("LQ builtin"));
        };
        if kappa < 0.0 {
            return Err(mfg_core::Error::invalid("kappa must be non-negative"));
        }
        let dep = if c == 0.0 && mean_drift == 0.0 {
            MeasureDependence::None
        } else {
            MeasureDependence::MeanOnly
        };
        MfgModel::builder(horizon, vec![x0], Matrix::scalar(sigma), 1)
            .b0(move |_, mu, o| o[0] = mean_drift * mu.mean()[0])
            .b2(|_| Matrix::scalar(1.0))
            .running_cost(
                move |_, x, mu, a| {
                    0.5 * (x[0] + c * mu.mean()[0]).powi(2) + 0.5 * a[0] * a[0] + kappa * a[0].cosh().ln()
                },
                move |_, x, mu, _, o| o[0] = x[0] + c * mu.mean()[0],
                move |_, _, _, a, o| o[0] = a[0] + kappa * a[0].tanh(),
            )
            .terminal_cost(
                move |x, mu| 0.5 * (x[0] + c * mu.mean()[0]).powi(2),
                move |x, mu, o| o[0] = x[0] + c * mu.mean()[0],
            )
            .lambda(0.5)
            .c_l(1.0f64.max(mean_drift.abs()).max(1.0 + c.abs()).max(1.0 + kappa))
            .dependence(dep)
            .build()
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<(Self, Vec<u8>)> {
        let raw = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_slice(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        Ok((cfg, raw))
    }

    /// The LQ spec when the model is linear-quadratic.
    pub fn lq(&self) -> Option<LqSpec> {
        self.lq_spec
            .clone()
            .or_else(|| self.model.as_ref().and_then(BuiltinModel::lq))
    }

    pub fn build_model(&self) -> anyhow::Result<MfgModel> {
        match (&self.lq_spec, &self.model) {
            (Some(spec), None) => Ok(build_lq_model(spec)?),
            (None, Some(m)) => Ok(m.build()?),
            (Some(_), Some(_)) => bail!("config sets both `lq_spec` and `model`"),
            (None, None) => bail!("config needs one of `lq_spec` or `model`"),
        }
    }

    pub fn grid(&self, model: &MfgModel) -> anyhow::Result<TimeGrid> {
        let n_steps = self.grid.map_or(100, |g| g.n_steps);
        if let Some(t) = self.grid.and_then(|g| g.horizon) {
            if t != model.horizon() {
                bail!("grid.T = {t} differs from the model horizon {}", model.horizon());
            }
        }
        Ok(TimeGrid::new(model.horizon(), n_steps)?)
    }

    pub fn fixed_point(&self, model: &MfgModel, seed: u64) -> anyhow::Result<FixedPointConfig> {
        let f = &self.fixedpoint;
        let cfg = FixedPointConfig {
            damping: f.damping,
            tolerance: f.tolerance,
            max_iters: f.max_iters,
            n_particles: f.n_particles,
            support: f.support,
            n_steps: self.grid(model)?.n_steps(),
            lattice: f.lattice.clone(),
            seed,
            antithetic: f.antithetic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep(&self, seed: u64) -> SweepConfig {
        let n = &self.experiment.nash;
        SweepConfig {
            replications: n.replications,
            seed,
            pilot_replications: n.pilot_replications,
            pilot_support: n.pilot_support,
            lattice: self.fixedpoint.lattice.clone(),
        }
    }

    pub fn rate(&self, seed: u64) -> RateConfig {
        let r = &self.experiment.rate;
        RateConfig {
            ns: r.ns.clone(),
            reps: r.reps,
            seed,
            reference_atoms: r.reference_atoms,
        }
    }
}
