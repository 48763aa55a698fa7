//! The finite game played with the distributed mean-field strategies.
//!
//! Player `i` uses `ᾱ^{N,i}_t = α̂(t, X^i_t, μ_t, u(t, X^i_t))`, which only sees
//! its own state, while the drift and the costs see the live empirical measure
//! `ν̄^N_t` of all `N` states. Replication `r` of an `N`-player run draws the
//! noise of player `i` from stream `("forward", [i])` under the seed
//! `derive_seed(seed, name, [N, r])`, which is also what
//! [`simulate_forward`](crate::fbsde::simulate_forward) uses for particle `i`.
//! Coupled runs and decoupled copies therefore share Brownian paths exactly.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::fbsde::{
    running_and_terminal_cost, simulate_controlled, simulate_forward, solve_frozen_fbsde, DecouplingField,
    EquilibriumPolicy, LatticeConfig, Policy, SimulationSpec,
};
use crate::math;
use crate::model::{CoefficientSlice, MfgModel};
use crate::rng::{derive_seed, streams, StreamRng};
use crate::stats::{loglog_fit, pairwise_sum, Estimate};
use crate::wasserstein::{w2, DiscreteMeasure, MeasureFlow};

/// Unilateral deviation of player 1.
#[derive(Clone)]
pub enum Deviation {
    /// `ᾱ` itself.
    Equilibrium,
    /// `c · ᾱ`.
    Scaled(f64),
    Zero,
    Constant(Vec<f64>),
    /// Open-loop path: `path[j]` on `[t_j, t_{j+1})`.
    OpenLoop(Vec<Vec<f64>>),
    /// Feedback built from a pilot estimate of the finite-`N` flow: the frozen
    /// FBSDE is re-solved against the pooled empirical flow of a pilot
    /// equilibrium run, and player 1 plays the resulting `α̂`.
    FrozenBestResponse,
    Custom {
        name: String,
        policy: Arc<dyn Policy + Send + Sync>,
    },
}

impl fmt::Debug for Deviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Deviation {
    pub fn name(&self) -> String {
        match self {
            Deviation::Equilibrium => "equilibrium".into(),
            Deviation::Scaled(c) => alloc::format!("scaled({c})"),
            Deviation::Zero => "zero".into(),
            Deviation::Constant(v) => alloc::format!("constant({v:?})"),
            Deviation::OpenLoop(_) => "open_loop".into(),
            Deviation::FrozenBestResponse => "frozen_best_response".into(),
            Deviation::Custom { name, .. } => name.clone(),
        }
    }
}

struct Game<'a> {
    model: &'a MfgModel,
    flow: &'a MeasureFlow,
    field: &'a DecouplingField,
    eq: EquilibriumPolicy<'a>,
    slices: Vec<CoefficientSlice>,
}

/// Output of one coupled replication.
struct CoupledRun {
    costs: Vec<f64>,
    /// `states[(i * nodes + j) * d + c]`.
    states: Vec<f64>,
}

impl<'a> Game<'a> {
    fn new(model: &'a MfgModel, field: &'a DecouplingField, flow: &'a MeasureFlow) -> Result<Self> {
        let eq = EquilibriumPolicy::new(model, flow, field)?;
        let slices = flow.grid().times().map(|t| model.slice(t)).collect();
        Ok(Game {
            model,
            flow,
            field,
            eq,
            slices,
        })
    }

    /// Coupled system: players `1..N` play `ᾱ`, player 1 (index 0) plays
    /// `deviation` when given.
    fn coupled(&self, n: usize, rep_seed: u64, deviation: Option<&dyn Policy>) -> Result<CoupledRun> {
        let model = self.model;
        let grid = *self.flow.grid();
        let (d, k, m) = (model.state_dim(), model.control_dim(), model.noise_dim());
        let steps = grid.n_steps();
        let nodes = grid.n_nodes();
        let dt = grid.dt();
        let sqdt = math::sqrt(dt);
        let mut rngs: Vec<StreamRng> = (0..n)
            .map(|i| StreamRng::new(rep_seed, streams::FORWARD, &[i as u64]))
            .collect();
        let mut states = vec![0.0; n * nodes * d];
        for i in 0..n {
            states[i * nodes * d..i * nodes * d + d].copy_from_slice(model.x0());
        }
        let mut running = vec![Vec::with_capacity(steps); n];
        let mut b0 = vec![0.0; d];
        let mut alpha = vec![0.0; k];
        let mut xi = vec![0.0; m];
        let mut drift = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut x = vec![0.0; d];
        for j in 0..steps {
            let nu = empirical_at(&states, n, nodes, d, j);
            let t = grid.t(j);
            model.b0(t, &nu, &mut b0);
            for i in 0..n {
                let off = (i * nodes + j) * d;
                x.copy_from_slice(&states[off..off + d]);
                match (i, deviation) {
                    (0, Some(policy)) => policy.control(j, &x, &mut alpha)?,
                    _ => self.eq.control(j, &x, &mut alpha)?,
                }
                running[i].push(model.f(t, &x, &nu, &alpha));
                rngs[i].fill_normal(&mut xi);
                xi.iter_mut().for_each(|z| *z *= sqdt);
                crate::fbsde::euler_step(model, &self.slices[j], &b0, &x, &alpha, &xi, dt, &mut drift, &mut next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("N-player simulation"));
                }
                states[off + d..off + 2 * d].copy_from_slice(&next);
            }
        }
        let nu_t = empirical_at(&states, n, nodes, d, steps);
        let costs = (0..n)
            .map(|i| {
                let off = (i * nodes + steps) * d;
                model.g(&states[off..off + d], &nu_t) + dt * pairwise_sum(&running[i])
            })
            .collect();
        Ok(CoupledRun { costs, states })
    }

    /// Decoupled copies `X̄^i` facing `μ`, under the same noise as `coupled`.
    fn decoupled(&self, n: usize, rep_seed: u64) -> Result<(Vec<f64>, crate::fbsde::PathEnsemble)> {
        let paths = simulate_forward(self.model, self.flow, self.field, n, rep_seed, &Sequential)?;
        let costs = running_and_terminal_cost(self.model, &paths, self.flow)?;
        Ok((costs, paths))
    }
}

fn empirical_at(states: &[f64], n: usize, nodes: usize, d: usize, j: usize) -> DiscreteMeasure {
    let mut pts = Vec::with_capacity(n * d);
    for i in 0..n {
        let off = (i * nodes + j) * d;
        pts.extend_from_slice(&states[off..off + d]);
    }
    DiscreteMeasure::uniform(d, pts).expect("at least one player")
}

fn rep_seed(seed: u64, name: &str, n: usize, rep: usize) -> u64 {
    derive_seed(seed, name, &[n as u64, rep as u64])
}

/// Per-player costs `J̄^{N,i}` of the coupled game under `ᾱ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NPlayerCosts {
    pub n: usize,
    pub replications: usize,
    /// Estimate of `J̄^{N,i}` for each player over replications.
    pub per_player: Vec<Estimate>,
    /// Per-replication average over players.
    pub pooled: Estimate,
}

pub fn simulate_nplayer<E: Executor>(
    model: &MfgModel,
    field: &DecouplingField,
    flow: &MeasureFlow,
    n: usize,
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<NPlayerCosts> {
    if n == 0 || replications == 0 {
        return Err(Error::invalid("need at least one player and one replication"));
    }
    let game = Game::new(model, field, flow)?;
    let runs = exec.map(replications, |r| {
        game.coupled(n, rep_seed(seed, streams::NPLAYER, n, r), None)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let per_player = (0..n)
        .map(|i| Estimate::from_samples(&runs.iter().map(|r| r.costs[i]).collect::<Vec<_>>()))
        .collect();
    let pooled = Estimate::from_samples(
        &runs
            .iter()
            .map(|r| pairwise_sum(&r.costs) / n as f64)
            .collect::<Vec<_>>(),
    );
    Ok(NPlayerCosts {
        n,
        replications,
        per_player,
        pooled,
    })
}

/// Paths of the coupled game for one replication, `states[i][j]`.
pub fn nplayer_paths(
    model: &MfgModel,
    field: &DecouplingField,
    flow: &MeasureFlow,
    n: usize,
    rep_seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let game = Game::new(model, field, flow)?;
    let run = game.coupled(n, rep_seed, None)?;
    let d = model.state_dim();
    let nodes = flow.grid().n_nodes();
    Ok((0..n)
        .map(|i| {
            (0..nodes)
                .map(|j| run.states[(i * nodes + j) * d..(i * nodes + j + 1) * d].to_vec())
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashRow {
    pub n: usize,
    /// `J̄^{N,1}` under `ᾱ`.
    pub player_one: Estimate,
    /// Average of `J̄^{N,i}` over players.
    pub pooled: Estimate,
    /// Paired estimate of `mean_i (J̄^{N,i} - J^i)` where `J^i` is the cost of
    /// player `i`'s decoupled copy under the same noise.
    pub gap: Estimate,
    /// `ε_N = |gap|`.
    pub epsilon: f64,
    /// `J̄^{N,i}` for every player.
    pub per_player: Vec<Estimate>,
    /// `|J̄^{N,1} - J|` against the supplied limit cost.
    pub player_one_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub deviation: String,
    pub n: usize,
    /// `J̄^{N,1}(ᾱ) - J̄^{N,1}(β, ᾱ^{-1})`, paired over replications.
    pub improvement: Estimate,
    /// `ε_N + 3 · stderr(improvement)`.
    pub allowance: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashGapReport {
    pub ns: Vec<usize>,
    pub limit_cost: f64,
    pub rows: Vec<NashRow>,
    pub deviations: Vec<DeviationRow>,
    /// Log-log slope of `ε_N` against `N`.
    pub gap_slope: Option<f64>,
    pub epsilon_decreasing: bool,
    pub all_within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub replications: usize,
    pub seed: u64,
    /// Replications of the pilot run behind [`Deviation::FrozenBestResponse`].
    pub pilot_replications: usize,
    /// Support of the pooled pilot flow.
    pub pilot_support: usize,
    pub lattice: LatticeConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            replications: 200,
            seed: 0,
            pilot_replications: 50,
            pilot_support: 512,
            lattice: LatticeConfig::default(),
        }
    }
}

struct ScaledEq<'a> {
    eq: &'a EquilibriumPolicy<'a>,
    factor: f64,
}

impl Policy for ScaledEq<'_> {
    fn control(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.eq.control(j, x, out)?;
        out.iter_mut().for_each(|a| *a *= self.factor);
        Ok(())
    }
}

struct OpenLoop<'a>(&'a [Vec<f64>]);

impl Policy for OpenLoop<'_> {
    fn control(&self, j: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.0[j]);
        Ok(())
    }
}

/// Pooled empirical flow of a pilot equilibrium run, and the decoupling field
/// solved against it.
fn pilot_response<E: Executor>(
    game: &Game<'_>,
    n: usize,
    config: &SweepConfig,
    exec: &E,
) -> Result<(MeasureFlow, DecouplingField)> {
    let runs = exec.map(config.pilot_replications.max(1), |r| {
        game.coupled(n, rep_seed(config.seed, streams::PILOT, n, r), None)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let grid = *game.flow.grid();
    let d = game.model.state_dim();
    let nodes = grid.n_nodes();
    let measures = (0..nodes)
        .map(|j| {
            let mut pts = Vec::with_capacity(runs.len() * n * d);
            for run in &runs {
                for i in 0..n {
                    let off = (i * nodes + j) * d;
                    pts.extend_from_slice(&run.states[off..off + d]);
                }
            }
            let mut rng = StreamRng::new(config.seed, streams::THIN, &[n as u64, j as u64]);
            Ok(DiscreteMeasure::uniform(d, pts)?.thin(config.pilot_support, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let flow = MeasureFlow::new(grid, measures)?;
    let field = solve_frozen_fbsde(game.model, &flow, &config.lattice, exec)?;
    Ok((flow, field))
}

/// Unilateral deviations of player 1 at each `N`, compared with common random
/// numbers against the equilibrium run.
///
/// A finite sweep can falsify the approximate Nash property but never prove it
/// for all admissible deviations.
#[allow(clippy::too_many_arguments)]
pub fn deviation_sweep<E: Executor>(
    model: &MfgModel,
    field: &DecouplingField,
    flow: &MeasureFlow,
    limit_cost: f64,
    ns: &[usize],
    deviations: &[Deviation],
    config: &SweepConfig,
    exec: &E,
) -> Result<NashGapReport> {
    if deviations.is_empty() {
        return Err(Error::invalid("deviation list is empty"));
    }
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::invalid("player counts must be positive"));
    }
    if config.replications < 2 {
        return Err(Error::invalid("deviation sweep needs at least 2 replications"));
    }
    let game = Game::new(model, field, flow)?;
    let reps = config.replications;
    let mut rows = Vec::new();
    let mut dev_rows = Vec::new();
    for &n in ns {
        let seeds: Vec<u64> = (0..reps)
            .map(|r| rep_seed(config.seed, streams::NPLAYER, n, r))
            .collect();
        let base = exec.map(reps, |r| -> Result<(Vec<f64>, Vec<f64>)> {
            let run = game.coupled(n, seeds[r], None)?;
            let (dec, _) = game.decoupled(n, seeds[r])?;
            Ok((run.costs, dec))
        });
        let base = base.into_iter().collect::<Result<Vec<_>>>()?;
        let player_one = Estimate::from_samples(&base.iter().map(|(c, _)| c[0]).collect::<Vec<_>>());
        let pooled = Estimate::from_samples(&base.iter().map(|(c, _)| pairwise_sum(c) / n as f64).collect::<Vec<_>>());
        let gap = Estimate::from_samples(
            &base
                .iter()
                .map(|(c, dec)| {
                    let diffs: Vec<f64> = c.iter().zip(dec).map(|(a, b)| a - b).collect();
                    pairwise_sum(&diffs) / n as f64
                })
                .collect::<Vec<_>>(),
        );
        let epsilon = gap.mean.abs();
        let per_player = (0..n)
            .map(|i| Estimate::from_samples(&base.iter().map(|(c, _)| c[i]).collect::<Vec<_>>()))
            .collect();
        rows.push(NashRow {
            n,
            player_one,
            pooled,
            gap,
            epsilon,
            per_player,
            player_one_gap: (player_one.mean - limit_cost).abs(),
        });

        let pilot = if deviations.iter().any(|d| matches!(d, Deviation::FrozenBestResponse)) {
            Some(pilot_response(&game, n, config, exec)?)
        } else {
            None
        };
        let pilot_policy = match &pilot {
            Some((pflow, pfield)) => Some(EquilibriumPolicy::new(model, pflow, pfield)?),
            None => None,
        };
        for dev in deviations {
            let improvements: Vec<f64> = match dev {
                Deviation::Equilibrium => vec![0.0; reps],
                _ => {
                    let zero = vec![0.0; model.control_dim()];
                    let constant;
                    let scaled;
                    let open;
                    let policy: &dyn Policy = match dev {
                        Deviation::Scaled(c) => {
                            scaled = ScaledEq {
                                eq: &game.eq,
                                factor: *c,
                            };
                            &scaled
                        }
                        Deviation::Zero => {
                            constant = crate::fbsde::ConstantPolicy(zero);
                            &constant
                        }
                        Deviation::Constant(v) => {
                            if v.len() != model.control_dim() {
                                return Err(Error::DimensionMismatch {
                                    what: "constant deviation",
                                    expected: model.control_dim(),
                                    got: v.len(),
                                });
                            }
                            constant = crate::fbsde::ConstantPolicy(v.clone());
                            &constant
                        }
                        Deviation::OpenLoop(path) => {
                            if path.len() < flow.grid().n_steps() {
                                return Err(Error::invalid("open-loop deviation shorter than the grid"));
                            }
                            open = OpenLoop(path);
                            &open
                        }
                        Deviation::FrozenBestResponse => pilot_policy.as_ref().expect("pilot computed"),
                        Deviation::Custom { policy, .. } => policy.as_ref(),
                        Deviation::Equilibrium => unreachable!(),
                    };
                    let out = exec.map(reps, |r| {
                        game.coupled(n, seeds[r], Some(policy)).map(|run| run.costs[0])
                    });
                    out.into_iter()
                        .zip(&base)
                        .map(|(dev_cost, (b, _))| dev_cost.map(|c| b[0] - c))
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let improvement = Estimate::from_samples(&improvements);
            let allowance = epsilon + 3.0 * improvement.stderr;
            dev_rows.push(DeviationRow {
                deviation: dev.name(),
                n,
                improvement,
                allowance,
                within: improvement.mean <= allowance,
            });
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let gap_slope = loglog_fit(&xs, &ys).map(|(s, _)| s);
    let epsilon_decreasing = ys.windows(2).all(|w| w[1] < w[0]);
    let all_within = dev_rows.iter().all(|r| r.within);
    Ok(NashGapReport {
        ns: ns.to_vec(),
        limit_cost,
        rows,
        deviations: dev_rows,
        gap_slope,
        epsilon_decreasing,
        all_within,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub n: usize,
    /// `max_i E[sup_t |X^i_t - X̄^i_t|²]`.
    pub coupling_max: Estimate,
    /// Average over players of the same quantity.
    pub coupling_pooled: Estimate,
    /// `sup_t E[W_2²(μ̄^N_t, μ_t)]`.
    pub w2sq_sup: Estimate,
    /// Paired `mean_i (J̄^{N,i} - J^i)` against decoupled copies.
    pub cost_gap: Estimate,
    /// `|J̄^{N,1} - J|` against the supplied limit cost.
    pub player_one_gap: f64,
    /// `C · N^{-2/(d+4)}` with `C` calibrated on `coupling_max` at the
    /// smallest `N`.
    pub bound_c_npow: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosTable {
    pub rows: Vec<ChaosRow>,
    pub exponent: f64,
    pub constant: f64,
    pub coupling_slope: Option<f64>,
    pub w2_slope: Option<f64>,
    pub gap_slope: Option<f64>,
    /// `coupling_max <= C N^{-2/(d+4)}` at every `N` after the first.
    pub bound_holds: bool,
}

/// Coupled game against decoupled copies under shared noise.
#[allow(clippy::too_many_arguments)]
pub fn chaos_experiment<E: Executor>(
    model: &MfgModel,
    field: &DecouplingField,
    flow: &MeasureFlow,
    limit_cost: f64,
    ns: &[usize],
    replications: usize,
    seed: u64,
    exec: &E,
) -> Result<ChaosTable> {
    if replications < 2 {
        return Err(Error::invalid("chaos experiment needs at least 2 replications"));
    }
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] < 2 {
        return Err(Error::invalid("player counts must be increasing and at least 2"));
    }
    let game = Game::new(model, field, flow)?;
    let grid = *flow.grid();
    let d = model.state_dim();
    let nodes = grid.n_nodes();
    let mut rows = Vec::new();
    for &n in ns {
        struct Rep {
            sup_sq: Vec<f64>,
            w2sq: Vec<f64>,
            gap: f64,
            player_one: f64,
        }
        let reps = exec.map(replications, |r| -> Result<Rep> {
            let s = rep_seed(seed, streams::CHAOS, n, r);
            let run = game.coupled(n, s, None)?;
            let (dec_costs, dec) = game.decoupled(n, s)?;
            let sup_sq = (0..n)
                .map(|i| {
                    (0..nodes)
                        .map(|j| {
                            let off = (i * nodes + j) * d;
                            let x = &run.states[off..off + d];
                            x.iter()
                                .zip(dec.state(i, j))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let w2sq = (0..nodes)
                .map(|j| {
                    let nu = empirical_at(&run.states, n, nodes, d, j);
                    w2(&nu, flow.at(j)).map(|v| v * v)
                })
                .collect::<Result<Vec<_>>>()?;
            let diffs: Vec<f64> = run.costs.iter().zip(&dec_costs).map(|(a, b)| a - b).collect();
            Ok(Rep {
                sup_sq,
                w2sq,
                gap: pairwise_sum(&diffs) / n as f64,
                player_one: run.costs[0],
            })
        });
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let per_player: Vec<Estimate> = (0..n)
            .map(|i| Estimate::from_samples(&reps.iter().map(|r| r.sup_sq[i]).collect::<Vec<_>>()))
            .collect();
        let coupling_max = per_player
            .iter()
            .copied()
            .fold(None::<Estimate>, |best, e| match best {
                Some(b) if b.mean >= e.mean => Some(b),
                _ => Some(e),
            })
            .expect("n >= 2");
        let coupling_pooled = Estimate::from_samples(
            &reps
                .iter()
                .map(|r| pairwise_sum(&r.sup_sq) / n as f64)
                .collect::<Vec<_>>(),
        );
        let w2sq_sup = (0..nodes)
            .map(|j| Estimate::from_samples(&reps.iter().map(|r| r.w2sq[j]).collect::<Vec<_>>()))
            .fold(None::<Estimate>, |best, e| match best {
                Some(b) if b.mean >= e.mean => Some(b),
                _ => Some(e),
            })
            .expect("grid has nodes");
        let cost_gap = Estimate::from_samples(&reps.iter().map(|r| r.gap).collect::<Vec<_>>());
        let p1 = Estimate::from_samples(&reps.iter().map(|r| r.player_one).collect::<Vec<_>>());
        rows.push(ChaosRow {
            n,
            coupling_max,
            coupling_pooled,
            w2sq_sup,
            cost_gap,
            player_one_gap: (p1.mean - limit_cost).abs(),
            bound_c_npow: 0.0,
        });
    }
    let exponent = -2.0 / (d as f64 + 4.0);
    let n0 = rows[0].n as f64;
    let constant = rows[0].coupling_max.mean * math::powf(n0, -exponent);
    for r in &mut rows {
        r.bound_c_npow = constant * math::powf(r.n as f64, exponent);
    }
    let bound_holds = rows.iter().skip(1).all(|r| r.coupling_max.mean <= r.bound_c_npow);
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let fit = |ys: Vec<f64>| loglog_fit(&xs, &ys).map(|(s, _)| s);
    Ok(ChaosTable {
        coupling_slope: fit(rows.iter().map(|r| r.coupling_max.mean).collect()),
        w2_slope: fit(rows.iter().map(|r| r.w2sq_sup.mean).collect()),
        gap_slope: fit(rows.iter().map(|r| r.cost_gap.mean.abs()).collect()),
        rows,
        exponent,
        constant,
        bound_holds,
    })
}

/// Paths of `n` independent copies under an arbitrary feedback, facing `flow`;
/// a convenience for single-agent comparisons.
pub fn single_agent_costs<P: Policy, E: Executor>(
    model: &MfgModel,
    flow: &MeasureFlow,
    policy: &P,
    n: usize,
    seed: u64,
    exec: &E,
) -> Result<Vec<f64>> {
    let paths = simulate_controlled(model, flow, policy, &SimulationSpec::new(n, seed), exec)?;
    running_and_terminal_cost(model, &paths, flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsde::{LatticeSpec, TimeGrid};
    use crate::linalg::Matrix;
    use crate::model::{build_lq_model, ScalarLq};

    fn spec(mbar: f64, qbar: f64, b0: f64) -> ScalarLq {
        ScalarLq {
            q: 1.0,
            qbar,
            m: 1.0,
            mbar,
            n: 1.0,
            b0,
            b1: 0.0,
            b2: 1.0,
            sigma: 1.0,
            x0: 1.0,
            horizon: 1.0,
        }
    }

    /// Linear field `u = x + 0.2` on a coarse grid; exactness of the oracle is
    /// irrelevant for the structural checks here.
    fn setup(s: ScalarLq) -> (MfgModel, DecouplingField, MeasureFlow) {
        let model = build_lq_model(&s.into()).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let lat = LatticeSpec::centered(&[1.0], 6.0, 0.1).unwrap();
        let field = DecouplingField::from_fn(grid, lat, |_, x, o| o[0] = x[0] + 0.2).unwrap();
        let flow = MeasureFlow::dirac(grid, &[1.0]);
        (model, field, flow)
    }

    #[test]
    fn measure_free_players_match_single_agent_paths() {
        let (model, field, flow) = setup(spec(0.0, 0.0, 0.0));
        let seed = 77;
        let paths = nplayer_paths(&model, &field, &flow, 5, seed).unwrap();
        let single = simulate_forward(&model, &flow, &field, 5, seed, &Sequential).unwrap();
        for (i, path) in paths.iter().enumerate() {
            for (j, x) in path.iter().enumerate() {
                assert_eq!(x.as_slice(), single.state(i, j));
            }
        }
    }

    #[test]
    fn measure_free_coupling_error_is_zero() {
        let (model, field, flow) = setup(spec(0.5, 0.5, 0.0));
        let t = chaos_experiment(&model, &field, &flow, 0.0, &[2, 4], 3, 1, &Sequential).unwrap();
        assert!(t.rows.iter().all(|r| r.coupling_max.mean == 0.0));
    }

    #[test]
    fn mean_dependent_drift_couples_players() {
        let (model, field, flow) = setup(spec(0.0, 0.0, 0.5));
        let t = chaos_experiment(&model, &field, &flow, 0.0, &[2, 4], 3, 1, &Sequential).unwrap();
        assert!(t.rows.iter().all(|r| r.coupling_max.mean > 0.0));
    }

    #[test]
    fn deterministic_costs() {
        let (model, field, flow) = setup(spec(0.5, 0.5, 0.0));
        let a = simulate_nplayer(&model, &field, &flow, 6, 4, 3, &Sequential).unwrap();
        let b = simulate_nplayer(&model, &field, &flow, 6, 4, 3, &Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equilibrium_deviation_is_exactly_zero() {
        let (model, field, flow) = setup(spec(0.5, 0.5, 0.0));
        let cfg = SweepConfig {
            replications: 4,
            ..SweepConfig::default()
        };
        let devs = [Deviation::Equilibrium, Deviation::Scaled(1.0)];
        let r = deviation_sweep(&model, &field, &flow, 0.0, &[3], &devs, &cfg, &Sequential).unwrap();
        for row in &r.deviations {
            assert_eq!(row.improvement.mean, 0.0, "{}", row.deviation);
            assert_eq!(row.improvement.stderr, 0.0);
        }
        assert!(deviation_sweep(&model, &field, &flow, 0.0, &[3], &[], &cfg, &Sequential).is_err());
    }

    #[test]
    fn single_player_sees_own_dirac() {
        let (model, field, flow) = setup(spec(0.5, 0.5, 0.3));
        assert!(simulate_nplayer(&model, &field, &flow, 1, 2, 0, &Sequential).is_ok());
        let _ = Matrix::scalar(0.0);
    }
}
