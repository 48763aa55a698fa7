//! Exact discrete optimal transport.
//!
//! Two solvers for the transportation linear program: the Hungarian method for
//! square problems with uniform marginals (optimal plans are permutations), and
//! a primal network simplex on the bipartite graph for everything else.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Optimal assignment for a square cost matrix (row-major, `n × n`).
///
/// Returns `perm` with row `i` matched to column `perm[i]`, and the total cost.
pub fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    (perm, total)
}

/// One cell of a transport plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// Network simplex for the transportation problem.
///
/// `supply` (length m) and `demand` (length n) must carry equal total mass;
/// `cost` is row-major `m × n`. Returns the positive cells of an optimal plan.
pub fn network_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<PlanEntry>> {
    let m = supply.len();
    let n = demand.len();
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch {
            what: "cost matrix",
            expected: m * n,
            got: cost.len(),
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::invalid("transport between empty measures"));
    }
    let mut solver = TransportSimplex::northwest_corner(supply, demand, cost);
    solver.optimize()?;
    Ok(solver.plan())
}

struct TransportSimplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    // basic cells: (row, col, flow); always m + n - 1 of them
    basis: Vec<(usize, usize, f64)>,
    // tree bookkeeping, rebuilt after every pivot; nodes 0..m rows, m..m+n cols
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    in_basis: Vec<bool>,
    scan_from: usize,
}

const NO_PARENT: usize = usize::MAX;

impl<'a> TransportSimplex<'a> {
    fn northwest_corner(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let m = supply.len();
        let n = demand.len();
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            if i == m - 1 && j == n - 1 {
                basis.push((i, j, s[i].max(0.0)));
                break;
            }
            let f = s[i].min(d[j]).max(0.0);
            basis.push((i, j, f));
            s[i] -= f;
            d[j] -= f;
            if (s[i] <= d[j] && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut in_basis = vec![false; m * n];
        for &(r, c, _) in &basis {
            in_basis[r * n + c] = true;
        }
        TransportSimplex {
            m,
            n,
            cost,
            basis,
            parent: vec![NO_PARENT; m + n],
            parent_arc: vec![NO_PARENT; m + n],
            depth: vec![0; m + n],
            potential: vec![0.0; m + n],
            adjacency: vec![Vec::new(); m + n],
            in_basis,
            scan_from: 0,
        }
    }

    fn rebuild_tree(&mut self) -> Result<()> {
        let nodes = self.m + self.n;
        for a in &mut self.adjacency {
            a.clear();
        }
        for (k, &(r, c, _)) in self.basis.iter().enumerate() {
            self.adjacency[r].push(k);
            self.adjacency[self.m + c].push(k);
        }
        self.parent.iter_mut().for_each(|p| *p = NO_PARENT);
        let mut visited = vec![false; nodes];
        let mut stack = vec![0usize];
        visited[0] = true;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        let mut seen = 1;
        while let Some(node) = stack.pop() {
            for idx in 0..self.adjacency[node].len() {
                let k = self.adjacency[node][idx];
                let (r, c, _) = self.basis[k];
                let other = if node == r { self.m + c } else { r };
                if visited[other] {
                    continue;
                }
                visited[other] = true;
                seen += 1;
                self.parent[other] = node;
                self.parent_arc[other] = k;
                self.depth[other] = self.depth[node] + 1;
                // u_r + v_c = c_rc
                let crc = self.cost[r * self.n + c];
                self.potential[other] = crc - self.potential[node];
                stack.push(other);
            }
        }
        if seen != nodes {
            return Err(Error::Singular("transport basis is not a spanning tree"));
        }
        Ok(())
    }

    fn reduced_cost(&self, r: usize, c: usize) -> f64 {
        self.cost[r * self.n + c] - self.potential[r] - self.potential[self.m + c]
    }

    /// Block pricing: scan from the last position, return the most negative
    /// reduced cost within the first block that contains one.
    fn entering(&mut self, eps: f64) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = (libm::sqrt(total as f64) as usize).max(16);
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        let mut pos = self.scan_from;
        while scanned < total {
            let end = (scanned + block).min(total);
            while scanned < end {
                let cell = pos;
                pos += 1;
                if pos == total {
                    pos = 0;
                }
                scanned += 1;
                if self.in_basis[cell] {
                    continue;
                }
                let rc = self.reduced_cost(cell / self.n, cell % self.n);
                if rc < -eps && best.is_none_or(|(_, b)| rc < b) {
                    best = Some((cell, rc));
                }
            }
            if best.is_some() {
                break;
            }
        }
        self.scan_from = pos;
        best.map(|(cell, _)| (cell / self.n, cell % self.n))
    }

    fn optimize(&mut self) -> Result<()> {
        let scale = self.cost.iter().fold(0.0_f64, |a, c| a.max(c.abs())).max(1e-300);
        let eps = 1e-13 * scale;
        let budget = 50 * (self.m + self.n) * (self.m + self.n) + 1000;
        self.rebuild_tree()?;
        for _ in 0..budget {
            let Some((r, c)) = self.entering(eps) else {
                return Ok(());
            };
            self.pivot(r, c)?;
            self.rebuild_tree()?;
        }
        Err(Error::Unsupported(
            "network simplex exceeded its pivot budget (cycling)".into(),
        ))
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        // Tree path between row node r and column node m + c. Arcs on the path
        // adjacent to c (alternating) lose flow; the entering arc gains it.
        let mut a = r;
        let mut b = self.m + c;
        let mut from_r: Vec<usize> = Vec::new();
        let mut from_c: Vec<usize> = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] {
                from_r.push(self.parent_arc[a]);
                a = self.parent[a];
            } else {
                from_c.push(self.parent_arc[b]);
                b = self.parent[b];
            }
        }
        // Cycle order starting after the entering arc (r -> c): from c walk to
        // the apex, then back down to r.
        let mut cycle = from_c;
        cycle.extend(from_r.into_iter().rev());
        // Odd positions (0, 2, ...) are decreasing arcs.
        let mut theta = f64::INFINITY;
        let mut leave = None;
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                let f = self.basis[k].2;
                if f < theta {
                    theta = f;
                    leave = Some(k);
                }
            }
        }
        let leave = leave.ok_or(Error::Singular("pivot cycle without a decreasing arc"))?;
        let theta = theta.max(0.0);
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                self.basis[k].2 = (self.basis[k].2 - theta).max(0.0);
            } else {
                self.basis[k].2 += theta;
            }
        }
        let (lr, lc, _) = self.basis[leave];
        self.in_basis[lr * self.n + lc] = false;
        self.in_basis[r * self.n + c] = true;
        self.basis[leave] = (r, c, theta);
        Ok(())
    }

    fn plan(&self) -> Vec<PlanEntry> {
        let mut out: Vec<PlanEntry> = self
            .basis
            .iter()
            .filter(|(_, _, f)| *f > 0.0)
            .map(|&(source, target, mass)| PlanEntry { source, target, mass })
            .collect();
        out.sort_by_key(|e| (e.source, e.target));
        out
    }
}
