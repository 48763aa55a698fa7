//! Monte Carlo estimate of `E[W_2²(μ̄^N, μ)]` for empirical measures of `N`
//! i.i.d. samples, and a check of the `C · N^{-2/(d+4)}` bound.
//!
//! The law `μ` is represented by a quantile discretization with many atoms so
//! that every distance is computed exactly. Its own bias is measured against a
//! second, independently jittered stratified discretization.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::rng::{streams, StreamRng};
use crate::stats::{self, Estimate};

use super::w2sq_sorted;

/// A sampling distribution on `R^d` with (optionally) an exact quantile function.
pub trait Law: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]);
    /// Inverse CDF, when one exists in closed form (d = 1).
    fn quantile(&self, u: f64) -> Option<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Law1d {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Dirac { at: f64 },
}

impl Law for Law1d {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        out[0] = match *self {
            Law1d::Gaussian { mean, sd } => mean + sd * rng.normal(),
            Law1d::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            Law1d::Dirac { at } => at,
        };
    }

    fn quantile(&self, u: f64) -> Option<f64> {
        Some(match *self {
            Law1d::Gaussian { mean, sd } => mean + sd * stats::normal_quantile(u),
            Law1d::Uniform { lo, hi } => lo + (hi - lo) * u,
            Law1d::Dirac { at } => at,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub ns: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference_atoms")]
    pub reference_atoms: usize,
}

fn default_reference_atoms() -> usize {
    100_000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub mean_w2sq: f64,
    pub stderr: f64,
    /// `C · N^{-2/(d+4)}` with `C` calibrated at the smallest `N`.
    pub bound_c_npow: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub exponent: f64,
    pub constant: f64,
    /// Fitted log-log slope of the means; `None` when the means vanish.
    pub slope: Option<f64>,
    /// `W_2²` between two independent discretizations of the law.
    pub reference_bias: f64,
    pub reference_bias_ok: bool,
    pub bound_holds: bool,
}

/// Sorted quantile discretization with `k` equal-mass atoms; `jitter` picks
/// the position inside each stratum (midpoints when `None`).
fn quantile_reference(law: &dyn Law, k: usize, mut jitter: Option<&mut StreamRng>) -> Result<Vec<f64>> {
    let mut atoms = Vec::with_capacity(k);
    for i in 0..k {
        let off = match jitter.as_deref_mut() {
            Some(rng) => rng.uniform(),
            None => 0.5,
        };
        let u = (i as f64 + off) / k as f64;
        atoms.push(
            law.quantile(u)
                .ok_or_else(|| Error::Unsupported("law has no quantile function".into()))?,
        );
    }
    atoms.sort_by(f64::total_cmp);
    Ok(atoms)
}

fn uniform_atoms(xs: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let w = 1.0 / xs.len() as f64;
    xs.iter().map(move |&x| (x, w))
}

pub fn empirical_rate_experiment<L: Law, E: Executor>(law: &L, config: &RateConfig, exec: &E) -> Result<RateTable> {
    if config.reps < 2 {
        return Err(Error::invalid("rate experiment needs at least 2 replications"));
    }
    if config.ns.is_empty() || config.ns.windows(2).any(|w| w[0] >= w[1]) || config.ns[0] == 0 {
        return Err(Error::invalid("sample sizes must be positive and strictly increasing"));
    }
    if law.dim() != 1 {
        return Err(Error::Unsupported(
            "rate experiment uses exact 1-d quantile couplings; law must be one-dimensional".into(),
        ));
    }
    let k = config.reference_atoms.max(2);
    let reference = quantile_reference(law, k, None)?;
    let mut jitter_rng = StreamRng::new(config.seed, streams::REFERENCE, &[k as u64]);
    let jittered = quantile_reference(law, k, Some(&mut jitter_rng))?;
    let reference_bias = w2sq_sorted(uniform_atoms(&reference), uniform_atoms(&jittered));

    let d = law.dim() as f64;
    let exponent = -2.0 / (d + 4.0);
    let mut estimates = Vec::with_capacity(config.ns.len());
    for &n in &config.ns {
        let samples: Vec<f64> = exec.map(config.reps, |rep| {
            let mut rng = StreamRng::new(config.seed, streams::RATE, &[n as u64, rep as u64]);
            let mut xs = alloc::vec![0.0; n];
            for x in xs.iter_mut() {
                law.sample(&mut rng, core::slice::from_mut(x));
            }
            xs.sort_by(f64::total_cmp);
            w2sq_sorted(uniform_atoms(&xs), uniform_atoms(&reference))
        });
        estimates.push((n, Estimate::from_samples(&samples)));
    }
    let (n0, e0) = estimates[0];
    let constant = e0.mean * math::powf(n0 as f64, -exponent);
    let rows: Vec<RateRow> = estimates
        .iter()
        .map(|&(n, e)| RateRow {
            n,
            mean_w2sq: e.mean,
            stderr: e.stderr,
            bound_c_npow: constant * math::powf(n as f64, exponent),
        })
        .collect();
    let bound_holds = rows.iter().skip(1).all(|r| r.mean_w2sq <= r.bound_c_npow);
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_w2sq).collect();
    let slope = stats::loglog_fit(&xs, &ys).map(|(s, _)| s);
    let smallest = ys.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateTable {
        rows,
        exponent,
        constant,
        slope,
        reference_bias,
        reference_bias_ok: reference_bias <= 0.05 * smallest,
        bound_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use alloc::vec;

    #[test]
    fn degenerate_law_gives_zero() {
        let cfg = RateConfig {
            ns: vec![4, 16, 64],
            reps: 3,
            seed: 1,
            reference_atoms: 1000,
        };
        let t = empirical_rate_experiment(&Law1d::Dirac { at: 0.0 }, &cfg, &Sequential).unwrap();
        assert!(t.rows.iter().all(|r| r.mean_w2sq == 0.0));
        assert!(t.bound_holds);
        assert!(t.reference_bias_ok);
    }

    #[test]
    fn rejects_single_replication() {
        let cfg = RateConfig {
            ns: vec![4],
            reps: 1,
            seed: 1,
            reference_atoms: 10,
        };
        assert!(empirical_rate_experiment(&Law1d::Dirac { at: 0.0 }, &cfg, &Sequential).is_err());
    }
}
