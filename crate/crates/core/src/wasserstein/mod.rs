//! Discrete measures, exact Wasserstein distances and the empirical-measure
//! rate experiment.

mod measure;
pub mod ot;
pub mod rate;

use alloc::vec::Vec;

pub use measure::{DiscreteMeasure, MeasureFlow};
pub use ot::PlanEntry;
pub use rate::{empirical_rate_experiment, Law, RateConfig, RateRow, RateTable};

use crate::error::{Error, Result};
use crate::math;

/// Upper bound on `|a| · |b|` accepted by [`w2_exact`].
pub const MAX_TRANSPORT_CELLS: usize = 1 << 20;

/// Ground cost of the transport problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundCost {
    /// `|x - y|²`, giving `W_2²`.
    SquaredEuclidean,
    /// `|x - y|`, giving `W_1`.
    Euclidean,
}

/// `M_p(μ)`.
pub fn moment(mu: &DiscreteMeasure, p: u32) -> Result<f64> {
    mu.moment(p)
}

/// Squared `W_2` between two one-dimensional measures given as sorted
/// `(position, weight)` sequences, by walking the merged quantile partition.
pub(crate) fn w2sq_sorted<A, B>(mut a: A, mut b: B) -> f64
where
    A: Iterator<Item = (f64, f64)>,
    B: Iterator<Item = (f64, f64)>,
{
    let (Some((mut xa, mut ra)), Some((mut xb, mut rb))) = (a.next(), b.next()) else {
        return 0.0;
    };
    let mut acc = 0.0;
    loop {
        let mass = ra.min(rb);
        let d = xa - xb;
        acc += mass * d * d;
        ra -= mass;
        rb -= mass;
        if ra <= 0.0 {
            match a.next() {
                Some((x, w)) => {
                    xa = x;
                    ra = w;
                }
                None => break,
            }
        }
        if rb <= 0.0 {
            match b.next() {
                Some((x, w)) => {
                    xb = x;
                    rb = w;
                }
                None => break,
            }
        }
    }
    acc
}

/// Exact `W_2` in one dimension via the quantile (monotone) coupling.
///
/// Atoms are ordered by a stable sort on position, so ties keep their index
/// order and the result is deterministic.
pub fn w2_1d(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Unsupported(alloc::format!(
            "w2_1d needs one-dimensional measures (got {} and {})",
            a.dim(),
            b.dim()
        )));
    }
    let oa = a.sorted_order_1d();
    let ob = b.sorted_order_1d();
    let sq = w2sq_sorted(
        oa.iter().map(|&i| (a.points()[i], a.weight(i))),
        ob.iter().map(|&i| (b.points()[i], b.weight(i))),
    );
    Ok(math::sqrt(sq.max(0.0)))
}

fn cost_matrix(a: &DiscreteMeasure, b: &DiscreteMeasure, ground: GroundCost) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            let d2 = math::dist2(a.point(i), b.point(j));
            c.push(match ground {
                GroundCost::SquaredEuclidean => d2,
                GroundCost::Euclidean => math::sqrt(d2),
            });
        }
    }
    c
}

fn is_uniform(mu: &DiscreteMeasure) -> bool {
    let w = 1.0 / mu.len() as f64;
    mu.weights().iter().all(|x| (x - w).abs() <= 1e-15)
}

/// Optimal transport plan and its total cost `Σ π_ij c_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    pub entries: Vec<PlanEntry>,
}

/// Solves the transport LP exactly: Hungarian method when both measures are
/// uniform with equal support sizes, network simplex otherwise.
pub fn transport_plan(a: &DiscreteMeasure, b: &DiscreteMeasure, ground: GroundCost) -> Result<TransportPlan> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "transport dimension",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let cells = a.len().saturating_mul(b.len());
    if cells > MAX_TRANSPORT_CELLS {
        return Err(Error::TransportTooLarge {
            rows: a.len(),
            cols: b.len(),
            limit: MAX_TRANSPORT_CELLS,
        });
    }
    let cost = cost_matrix(a, b, ground);
    if a.len() == b.len() && is_uniform(a) && is_uniform(b) {
        let n = a.len();
        let (perm, total) = ot::hungarian(&cost, n);
        let w = 1.0 / n as f64;
        let entries = perm
            .iter()
            .enumerate()
            .map(|(source, &target)| PlanEntry {
                source,
                target,
                mass: w,
            })
            .collect();
        return Ok(TransportPlan {
            cost: total * w,
            entries,
        });
    }
    transport_plan_simplex(a, b, &cost)
}

fn transport_plan_simplex(a: &DiscreteMeasure, b: &DiscreteMeasure, cost: &[f64]) -> Result<TransportPlan> {
    let entries = ot::network_simplex(a.weights(), b.weights(), cost)?;
    let total = entries
        .iter()
        .map(|e| e.mass * cost[e.source * b.len() + e.target])
        .sum();
    Ok(TransportPlan { cost: total, entries })
}

/// Exact `W_2` by linear programming, in any dimension.
pub fn w2_exact(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let plan = transport_plan(a, b, GroundCost::SquaredEuclidean)?;
    Ok(math::sqrt(plan.cost.max(0.0)))
}

/// Exact `W_2` always through the network simplex (no assignment shortcut).
pub fn w2_simplex(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "transport dimension",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let cost = cost_matrix(a, b, GroundCost::SquaredEuclidean);
    let plan = transport_plan_simplex(a, b, &cost)?;
    Ok(math::sqrt(plan.cost.max(0.0)))
}

/// Exact `W_1`.
pub fn w1_exact(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(transport_plan(a, b, GroundCost::Euclidean)?.cost)
}

/// `W_2` by the cheapest exact route for the dimension.
pub fn w2(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.dim() == 1 && b.dim() == 1 {
        w2_1d(a, b)
    } else {
        w2_exact(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use alloc::vec;

    fn m1(points: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform(1, points.to_vec()).unwrap()
    }

    #[test]
    fn moments() {
        assert!((moment(&DiscreteMeasure::dirac(&[3.0]), 2).unwrap() - 3.0).abs() < 1e-15);
        assert!((moment(&m1(&[-1.0, 1.0]), 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((moment(&m1(&[0.0, 2.0]), 2).unwrap() - math::sqrt(2.0)).abs() < 1e-15);
        assert!(moment(&m1(&[0.0]), 0).is_err());
    }

    #[test]
    fn w2_1d_examples() {
        let x = 2.5;
        let d = w2_1d(&DiscreteMeasure::dirac(&[0.0]), &DiscreteMeasure::dirac(&[x])).unwrap();
        assert_eq!(d, x);
        assert!((w2_1d(&m1(&[0.0, 1.0]), &m1(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w2_1d_rejects_higher_dimension() {
        let a = DiscreteMeasure::dirac(&[0.0, 0.0]);
        assert!(w2_1d(&a, &a).is_err());
    }

    #[test]
    fn w2_exact_examples() {
        let a = DiscreteMeasure::dirac(&[0.0, 0.0]);
        let b = DiscreteMeasure::dirac(&[3.0, 4.0]);
        assert!((w2_exact(&a, &b).unwrap() - 5.0).abs() < 1e-15);
        let c = DiscreteMeasure::uniform(2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        assert!(w2_exact(&c, &c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn size_limit() {
        let big = DiscreteMeasure::uniform(1, (0..2048).map(f64::from).collect()).unwrap();
        let other = DiscreteMeasure::uniform(1, (0..1024).map(f64::from).collect()).unwrap();
        assert!(matches!(w2_exact(&big, &other), Err(Error::TransportTooLarge { .. })));
    }

    #[test]
    fn w1_of_shifted_diracs() {
        let a = m1(&[0.0, 1.0]);
        let b = m1(&[2.0, 3.0]);
        assert!((w1_exact(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn simplex_matches_quantile_coupling_on_weighted_instances() {
        let mut rng = StreamRng::new(11, "w2-weighted", &[]);
        for _ in 0..20 {
            let pa: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let pb: Vec<f64> = (0..5).map(|_| 2.0 * rng.normal()).collect();
            let wa: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
            let wb: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
            let a = DiscreteMeasure::normalized(1, pa, wa).unwrap();
            let b = DiscreteMeasure::normalized(1, pb, wb).unwrap();
            let lp = w2_exact(&a, &b).unwrap();
            let q = w2_1d(&a, &b).unwrap();
            assert!((lp - q).abs() < 1e-10, "{lp} vs {q}");
        }
    }
}
