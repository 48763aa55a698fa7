//! Gauss–Hermite rules for expectations over standard Gaussian vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Tensor-product rule: `E[h(ξ)] ≈ Σ_q weights[q] · h(nodes[q])` for
/// `ξ ~ N(0, I_m)`. Nodes are stored flat, `m` entries each.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub dim: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize, dim: usize) -> Self {
        let (z, w) = probabilists_rule(order);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let total = order.pow(dim as u32);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut weight = 1.0;
            for &i in &idx {
                nodes.push(z[i]);
                weight *= w[i];
            }
            weights.push(weight);
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < order {
                    break;
                }
                *slot = 0;
            }
        }
        GaussHermite { dim, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }
}

/// One-dimensional rule for `N(0, 1)`: the physicists' Hermite nodes found by
/// Newton's method, rescaled by `√2` with weights divided by `√π`.
fn probabilists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let pim4 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => math::sqrt(2.0 * nf + 1.0) - 1.85575 * math::powf(2.0 * nf + 1.0, -1.0 / 6.0),
            1 => z - 1.14 * math::powf(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * math::sqrt(2.0 / (jf + 1.0)) * p2 - math::sqrt(jf / (jf + 1.0)) * p3;
            }
            pp = math::sqrt(2.0 * nf) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt_pi = math::sqrt(core::f64::consts::PI);
    let nodes: Vec<f64> = x.iter().rev().map(|v| core::f64::consts::SQRT_2 * v).collect();
    let weights: Vec<f64> = w.iter().rev().map(|v| v / sqrt_pi).collect();
    (nodes, weights)
}
