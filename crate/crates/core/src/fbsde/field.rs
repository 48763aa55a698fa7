use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::error::{Error, Result};
use crate::math;

/// Largest state dimension handled by the lattice solver.
pub const MAX_LATTICE_DIM: usize = 2;

/// Rectangular lattice `lower + h·i`, `0 <= i_a < counts[a]`, flattened
/// row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub spacing: f64,
    pub counts: Vec<usize>,
}

impl LatticeSpec {
    pub fn new(lower: Vec<f64>, spacing: f64, counts: Vec<usize>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > MAX_LATTICE_DIM {
            return Err(Error::Unsupported(alloc::format!(
                "lattice solver supports d <= {MAX_LATTICE_DIM}, got d = {dim}"
            )));
        }
        if counts.len() != dim || counts.iter().any(|&c| c < 2) {
            return Err(Error::invalid("lattice needs at least 2 points per axis"));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid("lattice spacing must be positive"));
        }
        Ok(LatticeSpec {
            dim,
            lower,
            spacing,
            counts,
        })
    }

    /// Lattice covering `[center - radius, center + radius]` in every axis with
    /// spacing exactly `h` (the upper end is rounded outward).
    pub fn centered(center: &[f64], radius: f64, h: f64) -> Result<Self> {
        let cells = math::ceil(2.0 * radius / h).max(1.0) as usize;
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            h,
            vec![cells + 1; center.len()],
        )
    }

    pub fn n_points(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.spacing * (self.counts[axis] - 1) as f64
    }

    fn stride(&self, axis: usize) -> usize {
        self.counts[axis + 1..].iter().product()
    }

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            let i = rem % self.counts[a];
            rem /= self.counts[a];
            out[a] = self.lower[a] + self.spacing * i as f64;
        }
    }

    /// Multilinear stencil for `x`: up to four `(point index, weight)` pairs.
    /// Cells are clamped to the lattice while fractions are not, which turns the
    /// boundary cells into linear extrapolation.
    #[inline]
    fn stencil(&self, x: &[f64]) -> ([usize; 4], [f64; 4], usize) {
        let mut base = [0usize; MAX_LATTICE_DIM];
        let mut frac = [0.0; MAX_LATTICE_DIM];
        for a in 0..self.dim {
            let s = (x[a] - self.lower[a]) / self.spacing;
            let i = (math::floor(s).max(0.0) as usize).min(self.counts[a] - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut idx = [0usize; 4];
        let mut w = [0.0; 4];
        let corners = 1usize << self.dim;
        for (c, (ic, wc)) in idx.iter_mut().zip(w.iter_mut()).enumerate().take(corners) {
            let mut flat = 0;
            let mut weight = 1.0;
            for a in 0..self.dim {
                let bit = (c >> (self.dim - 1 - a)) & 1;
                flat += (base[a] + bit) * self.stride(a);
                weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            *ic = flat;
            *wc = weight;
        }
        (idx, w, corners)
    }

    /// Distance by which `x` leaves the lattice box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        (0..self.dim)
            .map(|a| (self.lower[a] - x[a]).max(x[a] - self.upper(a)).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Lattice values of `u(t_j, ·)`, one `d`-vector per lattice point and time
/// node, laid out as `values[(j * n_points + point) * d + component]`.
///
/// Between lattice points `u` is multilinear; outside the box it continues
/// linearly with the slope of the boundary cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingField {
    pub grid: TimeGrid,
    pub lattice: LatticeSpec,
    pub values: Vec<f64>,
    /// Per time node and boundary face (`2·axis + side`, side 0 = lower), the
    /// largest one-sided slope `|Δu| / h` used for extrapolation.
    pub growth_slope: Vec<f64>,
    /// Quadrature points that fell outside the extrapolation margin during the
    /// backward sweep.
    pub extrapolation_warnings: u64,
}

impl DecouplingField {
    pub fn from_values(grid: TimeGrid, lattice: LatticeSpec, values: Vec<f64>, warnings: u64) -> Result<Self> {
        let expected = grid.n_nodes() * lattice.n_points() * lattice.dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "decoupling field values",
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoupling field"));
        }
        let mut field = DecouplingField {
            grid,
            lattice,
            values,
            growth_slope: Vec::new(),
            extrapolation_warnings: warnings,
        };
        field.growth_slope = field.boundary_slopes();
        Ok(field)
    }

    /// Samples `u(t_j, x) = f(t_j, x)` on the lattice.
    pub fn from_fn(grid: TimeGrid, lattice: LatticeSpec, f: impl Fn(f64, &[f64], &mut [f64])) -> Result<Self> {
        let d = lattice.dim;
        let np = lattice.n_points();
        let mut values = vec![0.0; grid.n_nodes() * np * d];
        let mut x = vec![0.0; d];
        for j in 0..grid.n_nodes() {
            for p in 0..np {
                lattice.point(p, &mut x);
                let off = (j * np + p) * d;
                f(grid.t(j), &x, &mut values[off..off + d]);
            }
        }
        Self::from_values(grid, lattice, values, 0)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    /// All lattice values at time node `j`.
    pub fn slice(&self, j: usize) -> &[f64] {
        let n = self.lattice.n_points() * self.lattice.dim;
        &self.values[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn eval(&self, j: usize, x: &[f64], out: &mut [f64]) {
        eval_slice(&self.lattice, self.slice(j), x, out);
    }

    /// `max_j max_adjacent |u(t_j, x) - u(t_j, x')| / |x - x'|`.
    pub fn lipschitz(&self) -> f64 {
        (0..self.grid.n_nodes())
            .map(|j| self.lipschitz_at(j))
            .fold(0.0, f64::max)
    }

    pub fn lipschitz_at(&self, j: usize) -> f64 {
        let lat = &self.lattice;
        let d = lat.dim;
        let vals = self.slice(j);
        let mut worst = 0.0_f64;
        for p in 0..lat.n_points() {
            for a in 0..d {
                let stride = lat.stride(a);
                if (p / stride) % lat.counts[a] + 1 == lat.counts[a] {
                    continue;
                }
                let q = p + stride;
                let diff = math::sqrt((0..d).map(|c| sq(vals[q * d + c] - vals[p * d + c])).sum());
                worst = worst.max(diff / lat.spacing);
            }
        }
        worst
    }

    /// Smallest `c` with `|u(t_j, x_i)| <= c (1 + |x_i|)` over the lattice.
    pub fn growth(&self) -> f64 {
        let lat = &self.lattice;
        let d = lat.dim;
        let mut x = vec![0.0; d];
        let mut worst = 0.0_f64;
        for j in 0..self.grid.n_nodes() {
            let vals = self.slice(j);
            for p in 0..lat.n_points() {
                lat.point(p, &mut x);
                let u = math::norm(&vals[p * d..(p + 1) * d]);
                worst = worst.max(u / (1.0 + math::norm(&x)));
            }
        }
        worst
    }

    fn boundary_slopes(&self) -> Vec<f64> {
        let lat = &self.lattice;
        let d = lat.dim;
        let mut out = vec![0.0; self.grid.n_nodes() * 2 * d];
        for j in 0..self.grid.n_nodes() {
            let vals = self.slice(j);
            for p in 0..lat.n_points() {
                for a in 0..d {
                    let stride = lat.stride(a);
                    let pos = (p / stride) % lat.counts[a];
                    let (side, q) = if pos == 0 {
                        (0, p + stride)
                    } else if pos + 1 == lat.counts[a] {
                        (1, p - stride)
                    } else {
                        continue;
                    };
                    let diff = math::sqrt((0..d).map(|c| sq(vals[q * d + c] - vals[p * d + c])).sum());
                    let slot = &mut out[j * 2 * d + 2 * a + side];
                    *slot = f64::max(*slot, diff / lat.spacing);
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn eval_slice(lattice: &LatticeSpec, vals: &[f64], x: &[f64], out: &mut [f64]) {
    let d = lattice.dim;
    let (idx, w, corners) = lattice.stencil(x);
    out.iter_mut().for_each(|o| *o = 0.0);
    for c in 0..corners {
        let base = idx[c] * d;
        for (o, v) in out.iter_mut().zip(&vals[base..base + d]) {
            *o += w[c] * v;
        }
    }
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}
