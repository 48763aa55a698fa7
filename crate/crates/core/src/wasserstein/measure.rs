use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fbsde::TimeGrid;
use crate::math;
use crate::rng::StreamRng;

/// Finitely supported probability measure on `R^d`.
///
/// Points are stored flat (`len * dim`); the mean is cached because most
/// coefficient functions only look at it.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    mean: Vec<f64>,
}

const MASS_TOL: f64 = 1e-12;

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(dim, &points, &weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid("measure weights must sum to 1"));
        }
        Ok(Self::assemble(dim, points, weights))
    }

    /// Like [`DiscreteMeasure::new`] but rescales the weights to unit mass.
    pub fn normalized(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        Self::validate_shape(dim, &points, &weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::invalid("measure has no mass"));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self::assemble(dim, points, weights))
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid("uniform measure needs a non-empty point list"));
        }
        let n = points.len() / dim;
        Self::normalized(dim, points, vec![1.0; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        assert!(!point.is_empty(), "dirac needs a point");
        Self::assemble(point.len(), point.to_vec(), vec![1.0])
    }

    fn validate_shape(dim: usize, points: &[f64], weights: &[f64]) -> Result<()> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if weights.is_empty() {
            return Err(Error::invalid("measure must have at least one atom"));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch {
                what: "measure points",
                expected: dim * weights.len(),
                got: points.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("measure weights must be finite and non-negative"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("measure support"));
        }
        Ok(())
    }

    fn assemble(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut mean = vec![0.0; dim];
        for (p, w) in points.chunks_exact(dim).zip(&weights) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        DiscreteMeasure {
            dim,
            points,
            weights,
            mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `M_p(μ) = (Σ w_i |x_i|^p)^{1/p}`.
    pub fn moment(&self, p: u32) -> Result<f64> {
        if p == 0 {
            return Err(Error::invalid("moment order must be at least 1"));
        }
        let s: f64 = self
            .atoms()
            .map(|(x, w)| w * math::powf(math::norm(x), f64::from(p)))
            .sum();
        Ok(math::powf(s, 1.0 / f64::from(p)))
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms().map(|(x, w)| w * math::dot(x, x)).sum()
    }

    /// Image under `x ↦ s·x`.
    pub fn dilate(&self, s: f64) -> Self {
        Self::assemble(
            self.dim,
            self.points.iter().map(|x| s * x).collect(),
            self.weights.clone(),
        )
    }

    /// Image under `x ↦ x + shift`.
    pub fn translate(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self::assemble(self.dim, points, self.weights.clone())
    }

    /// `(1 - theta)·a + theta·b`: supports concatenated, weights scaled.
    pub fn mixture(a: &Self, b: &Self, theta: f64) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch {
                what: "mixture dimension",
                expected: a.dim,
                got: b.dim,
            });
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid("mixture weight must lie in [0, 1]"));
        }
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points);
        let mut weights: Vec<f64> = a.weights.iter().map(|w| (1.0 - theta) * w).collect();
        weights.extend(b.weights.iter().map(|w| theta * w));
        Self::normalized(a.dim, points, weights)
    }

    /// Atom indices sorted by position (d = 1), ties kept in index order.
    pub(crate) fn sorted_order_1d(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| self.points[i].total_cmp(&self.points[j]));
        idx
    }

    /// Reduces the support to at most `size` atoms.
    ///
    /// In one dimension the sorted mass is cut into `size` strata of equal mass
    /// and each stratum is replaced by its conditional mean, which preserves the
    /// mean exactly. Otherwise atoms are drawn by systematic resampling.
    pub fn thin(&self, size: usize, rng: &mut StreamRng) -> Self {
        assert!(size > 0, "thinning to zero atoms");
        if self.len() <= size {
            return self.clone();
        }
        if self.dim == 1 {
            self.thin_stratified(size)
        } else {
            self.thin_resample(size, rng)
        }
    }

    fn thin_stratified(&self, size: usize) -> Self {
        let order = self.sorted_order_1d();
        let target = 1.0 / size as f64;
        let mut points = Vec::with_capacity(size);
        let mut weights = Vec::with_capacity(size);
        let (mut acc_mass, mut acc_val) = (0.0, 0.0);
        for &i in &order {
            let x = self.points[i];
            let mut rem = self.weights[i];
            while rem > 0.0 {
                let last = points.len() + 1 == size;
                let room = target - acc_mass;
                if last || rem < room {
                    acc_mass += rem;
                    acc_val += rem * x;
                    rem = 0.0;
                } else {
                    acc_val += room * x;
                    points.push(acc_val / target);
                    weights.push(target);
                    acc_mass = 0.0;
                    acc_val = 0.0;
                    rem -= room;
                }
            }
        }
        if acc_mass > 0.0 {
            points.push(acc_val / acc_mass);
            weights.push(acc_mass);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::assemble(1, points, weights)
    }

    fn thin_resample(&self, size: usize, rng: &mut StreamRng) -> Self {
        let mut points = Vec::with_capacity(size * self.dim);
        let step = 1.0 / size as f64;
        let mut u = rng.uniform() * step;
        let mut cum = 0.0;
        let mut i = 0;
        for _ in 0..size {
            while i + 1 < self.len() && cum + self.weights[i] < u {
                cum += self.weights[i];
                i += 1;
            }
            points.extend_from_slice(self.point(i));
            u += step;
        }
        Self::assemble(self.dim, points, vec![step; size])
    }
}

/// One measure per node of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    measures: Vec<DiscreteMeasure>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if measures.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "measures per grid node",
                expected: grid.n_nodes(),
                got: measures.len(),
            });
        }
        let dim = measures[0].dim();
        if measures.iter().any(|m| m.dim() != dim) {
            return Err(Error::invalid("flow measures must share one dimension"));
        }
        Ok(MeasureFlow { grid, measures })
    }

    /// `δ_{x0}` at every node.
    pub fn dirac(grid: TimeGrid, x0: &[f64]) -> Self {
        let measures = vec![DiscreteMeasure::dirac(x0); grid.n_nodes()];
        MeasureFlow { grid, measures }
    }

    /// `δ_{path_j}` at node `j`.
    pub fn dirac_path(grid: TimeGrid, path: &[Vec<f64>]) -> Result<Self> {
        let measures = path.iter().map(|p| DiscreteMeasure::dirac(p)).collect();
        Self::new(grid, measures)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    #[inline]
    pub fn at(&self, j: usize) -> &DiscreteMeasure {
        &self.measures[j]
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn support_size(&self) -> usize {
        self.measures.iter().map(DiscreteMeasure::len).max().unwrap_or(0)
    }

    pub fn mean_path(&self) -> Vec<Vec<f64>> {
        self.measures.iter().map(|m| m.mean().to_vec()).collect()
    }

    /// `sup_j W_2(self_j, other_j)`.
    pub fn sup_w2(&self, other: &MeasureFlow) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::invalid("flows live on different grids"));
        }
        let mut sup = 0.0_f64;
        for (a, b) in self.measures.iter().zip(&other.measures) {
            sup = sup.max(super::w2(a, b)?);
        }
        Ok(sup)
    }
}
