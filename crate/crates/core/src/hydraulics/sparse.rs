//! Envelope (skyline) Cholesky factorization of the symmetric positive
//! definite nodal system, under a reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

/// Symbolic structure: ordering and envelope layout for a fixed sparsity
/// pattern. Reused across Newton iterations.
#[derive(Debug, Clone, Default)]
pub(crate) struct Skyline {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `inv[old] = new`.
    inv: Vec<usize>,
    /// First column stored in each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row's first stored entry in `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NotPositiveDefinite {
    pub row: usize,
}

impl Skyline {
    /// Builds the envelope for an `n × n` symmetric pattern given by the
    /// undirected adjacency lists.
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let perm = reverse_cuthill_mckee(adjacency);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nbrs) in adjacency.iter().enumerate() {
            let i = inv[old];
            for &o in nbrs {
                let j = inv[o];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut off = 0;
        for i in 0..n {
            start.push(off);
            off += i - first[i] + 1;
        }
        start.push(off);
        Skyline {
            n,
            perm,
            inv,
            first,
            start,
            values: vec![0.0; off],
        }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` at `(i, j)` (original numbering); only call once per
    /// unordered pair for off-diagonals.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        debug_assert!(c >= self.first[r], "entry outside envelope");
        self.values[self.start[r] + c - self.first[r]] += v;
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> usize {
        self.start[r] + c - self.first[r]
    }

    /// In-place `L·Lᵀ` factorization.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let ri = self.at(i, k0);
                let rj = self.at(j, k0);
                let len = j - k0;
                let dot: f64 = self.values[ri..ri + len]
                    .iter()
                    .zip(&self.values[rj..rj + len])
                    .map(|(a, b)| a * b)
                    .sum();
                let ij = self.at(i, j);
                let jj = self.at(j, j);
                self.values[ij] = (self.values[ij] - dot) / self.values[jj];
            }
            let ri = self.at(i, fi);
            let ii = self.at(i, i);
            let sq: f64 = self.values[ri..ii].iter().map(|a| a * a).sum();
            let d = self.values[ii] - sq;
            if !(d > 0.0) {
                return Err(NotPositiveDefinite { row: self.perm[i] });
            }
            self.values[ii] = d.sqrt();
        }
        Ok(())
    }

    /// Solves with the factored matrix; `rhs` and the result are in the
    /// original numbering.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| rhs[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.at(i, fi);
            let s: f64 = self.values[ri..ri + (i - fi)]
                .iter()
                .zip(&y[fi..i])
                .map(|(a, b)| a * b)
                .sum();
            y[i] = (y[i] - s) / self.values[self.at(i, i)];
        }
        for i in (0..n).rev() {
            y[i] /= self.values[self.at(i, i)];
            let yi = y[i];
            let fi = self.first[i];
            let ri = self.at(i, fi);
            for (k, l) in self.values[ri..ri + (i - fi)].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (i, v) in y.into_iter().enumerate() {
            x[self.perm[i]] = v;
        }
        x
    }

    #[cfg(test)]
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }
}

/// Reverse Cuthill-McKee ordering, `perm[new] = old`. Each connected
/// component starts from a pseudo-peripheral node.
pub(crate) fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if placed[seed] {
            continue;
        }
        let root = pseudo_peripheral(adjacency, &degree, seed);
        let mut queue = VecDeque::from([root]);
        placed[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v].iter().copied().filter(|&u| !placed[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            nbrs.dedup();
            for u in nbrs {
                if !placed[u] {
                    placed[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, root);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= ecc && ecc > 0 {
            break;
        }
        ecc = max_level;
        let far = (0..adjacency.len())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        if far == root {
            break;
        }
        root = far;
    }
    root
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &u in &adjacency[v] {
            if level[u].is_none() {
                level[u] = Some(lv + 1);
                queue.push_back(u);
            }
        }
    }
    level
}
