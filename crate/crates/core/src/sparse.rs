//! Symmetric sparse blocks and a skyline (envelope) Cholesky solver.
//!
//! Blocks are stored as lower-triangle coordinate lists. The skyline layout is
//! computed once from the union pattern of all blocks under a reverse
//! Cuthill-McKee ordering and shared by every operator assembled on it, so
//! assembling `K(P)` is a scatter of precomputed positions.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Symmetric matrix given by its lower triangle (`row >= col`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymBlock {
    pub dim: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SymBlock {
    pub fn new(dim: usize) -> Self {
        SymBlock { dim, ..Default::default() }
    }

    /// Adds `v` at `(i, j)` and its mirror; callers pass each unordered pair
    /// once, diagonal entries once.
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sorts entries and merges duplicates; drops exact zeros.
    pub fn compress(&mut self) {
        let mut idx: Vec<usize> = (0..self.nnz()).collect();
        idx.sort_unstable_by_key(|&k| (self.rows[k], self.cols[k]));
        let mut rows = Vec::with_capacity(idx.len());
        let mut cols = Vec::with_capacity(idx.len());
        let mut vals: Vec<f64> = Vec::with_capacity(idx.len());
        for k in idx {
            let (r, c, v) = (self.rows[k], self.cols[k], self.vals[k]);
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let keep: Vec<bool> = vals.iter().map(|v| *v != 0.0).collect();
        let filter = |xs: Vec<usize>| xs.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| x).collect();
        self.rows = filter(rows);
        self.cols = filter(cols);
        self.vals = vals.into_iter().filter(|v| *v != 0.0).collect();
    }

    /// `y += alpha * A x`
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for k in 0..self.vals.len() {
            let (i, j, v) = (self.rows[k], self.cols[k], alpha * self.vals[k]);
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_add(1.0, x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.vals.len() {
            let (i, j, v) = (self.rows[k], self.cols[k], self.vals[k]);
            s += v * x[i] * y[j];
            if i != j {
                s += v * x[j] * y[i];
            }
        }
        s
    }

    /// `self += alpha * other`, entries appended (call [`compress`](Self::compress) after).
    pub fn extend_scaled(&mut self, alpha: f64, other: &SymBlock) {
        self.rows.extend_from_slice(&other.rows);
        self.cols.extend_from_slice(&other.cols);
        self.vals.extend(other.vals.iter().map(|v| alpha * v));
    }

    pub fn frobenius(&self) -> f64 {
        let s: f64 = self.rows.iter().zip(&self.cols).zip(&self.vals)
            .map(|((i, j), v)| if i == j { v * v } else { 2.0 * v * v })
            .sum();
        sqrt(s)
    }
}

/// Reverse Cuthill-McKee permutation: `perm[new] = old`.
pub fn reverse_cuthill_mckee(dim: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for &(i, j) in edges {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; dim];
    let mut order = Vec::with_capacity(dim);
    while order.len() < dim {
        // start each component from a pseudo-peripheral node
        let seed = (0..dim).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]).unwrap();
        let start = peripheral(seed, &adj, &visited);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn peripheral(seed: usize, adj: &[Vec<usize>], blocked: &[bool]) -> usize {
    let mut root = seed;
    let mut height = 0;
    for _ in 0..8 {
        let levels = level_structure(root, adj, blocked);
        let last = levels.last().unwrap();
        let far = *last.iter().min_by_key(|&&w| (adj[w].len(), w)).unwrap();
        if levels.len() <= height {
            break;
        }
        height = levels.len();
        root = far;
    }
    root
}

fn level_structure(root: usize, adj: &[Vec<usize>], blocked: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = blocked.to_vec();
    seen[root] = true;
    let mut levels = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

/// Row-wise envelope storage in a permuted numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct SkylineLayout {
    dim: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of the first stored entry of each row; `start[dim]` is the size.
    start: Vec<usize>,
}

impl SkylineLayout {
    /// Layout for the union pattern of `blocks`.
    pub fn new(dim: usize, blocks: &[&SymBlock]) -> Self {
        let edges: Vec<(usize, usize)> = blocks
            .iter()
            .flat_map(|b| b.rows.iter().copied().zip(b.cols.iter().copied()))
            .collect();
        let perm = reverse_cuthill_mckee(dim, &edges);
        let mut inv = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..dim).collect();
        for &(i, j) in &edges {
            let (a, b) = (inv[i], inv[j]);
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(dim + 1);
        let mut off = 0;
        for r in 0..dim {
            start.push(off);
            off += r - first[r] + 1;
        }
        start.push(off);
        SkylineLayout { dim, perm, inv, first, start }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored entries.
    pub fn size(&self) -> usize {
        self.start[self.dim]
    }

    /// Storage position of the original entry `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        (c >= self.first[r]).then(|| self.start[r] + c - self.first[r])
    }

    /// Storage positions of every entry of `block`.
    pub fn positions(&self, block: &SymBlock) -> Result<Vec<usize>> {
        block
            .rows
            .iter()
            .zip(&block.cols)
            .map(|(&i, &j)| {
                self.position(i, j)
                    .ok_or_else(|| Error::InvalidInput(alloc::format!("entry ({i}, {j}) outside the skyline")))
            })
            .collect()
    }
}

/// Symmetric matrix in skyline storage.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    layout: Arc<SkylineLayout>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    pub fn zeros(layout: Arc<SkylineLayout>) -> Self {
        let values = vec![0.0; layout.size()];
        SkylineMatrix { layout, values }
    }

    pub fn layout(&self) -> &Arc<SkylineLayout> {
        &self.layout
    }

    /// Adds `alpha * block`, with `positions` from [`SkylineLayout::positions`].
    pub fn add_block(&mut self, alpha: f64, block: &SymBlock, positions: &[usize]) {
        for (p, v) in positions.iter().zip(&block.vals) {
            self.values[*p] += alpha * v;
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// In-place Cholesky factorization `A = L L^T`.
    pub fn factor(mut self) -> Result<SkylineCholesky> {
        let lay = &*self.layout;
        let v = &mut self.values;
        for i in 0..lay.dim {
            let fi = lay.first[i];
            let si = lay.start[i];
            for j in fi..i {
                let fj = lay.first[j];
                let sj = lay.start[j];
                let k0 = fi.max(fj);
                let mut s = v[si + j - fi];
                let (ri, rj) = (si + k0 - fi, sj + k0 - fj);
                for k in 0..(j - k0) {
                    s -= v[ri + k] * v[rj + k];
                }
                v[si + j - fi] = s / v[sj + j - fj];
            }
            let row = &v[si..si + i - fi];
            let d = v[si + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SolveFailure(alloc::format!("pivot {i} is {d:e}, matrix not positive definite")));
            }
            v[si + i - fi] = sqrt(d);
        }
        Ok(SkylineCholesky { layout: self.layout, values: self.values })
    }
}

/// Cholesky factor in skyline storage; solves reuse it for any right-hand side.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    layout: Arc<SkylineLayout>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let lay = &*self.layout;
        let v = &self.values;
        let mut y: Vec<f64> = lay.perm.iter().map(|&o| b[o]).collect();
        for i in 0..lay.dim {
            let fi = lay.first[i];
            let si = lay.start[i];
            let mut s = y[i];
            for (k, l) in v[si..si + i - fi].iter().enumerate() {
                s -= l * y[fi + k];
            }
            y[i] = s / v[si + i - fi];
        }
        for i in (0..lay.dim).rev() {
            let fi = lay.first[i];
            let si = lay.start[i];
            let yi = y[i] / v[si + i - fi];
            y[i] = yi;
            for (k, l) in v[si..si + i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; lay.dim];
        for (new, &old) in lay.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{DenseCholesky, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_grid(n: usize) -> SymBlock {
        let mut a = SymBlock::new(n * n);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                a.push(i, i, 4.0);
                if x + 1 < n {
                    a.push(i, i + 1, -1.0);
                }
                if y + 1 < n {
                    a.push(i, i + n, -1.0);
                }
            }
        }
        a
    }

    #[test]
    fn rcm_is_a_permutation_and_narrows_the_band() {
        let a = laplacian_grid(12);
        let edges: Vec<_> = a.rows.iter().copied().zip(a.cols.iter().copied()).collect();
        let perm = reverse_cuthill_mckee(a.dim, &edges);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..a.dim).collect::<Vec<_>>());
        let lay = SkylineLayout::new(a.dim, &[&a]);
        assert!(lay.size() <= a.dim * 14);
    }

    #[test]
    fn skyline_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = laplacian_grid(7);
        // random symmetric perturbation of the diagonal keeps it SPD
        for i in 0..a.dim {
            a.push(i, i, rng.gen::<f64>());
        }
        a.push(0, 48, -0.5);
        a.compress();
        let lay = Arc::new(SkylineLayout::new(a.dim, &[&a]));
        let mut m = SkylineMatrix::zeros(lay.clone());
        m.add_block(1.0, &a, &lay.positions(&a).unwrap());
        let chol = m.factor().unwrap();

        let mut d = DenseMatrix::zeros(a.dim, a.dim);
        for k in 0..a.nnz() {
            d[(a.rows[k], a.cols[k])] += a.vals[k];
            if a.rows[k] != a.cols[k] {
                d[(a.cols[k], a.rows[k])] += a.vals[k];
            }
        }
        let dense = DenseCholesky::factor(&d).unwrap();
        let b: Vec<f64> = (0..a.dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let x = chol.solve(&b);
        let y = dense.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
        let r = a.matvec(&x);
        for (p, q) in r.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymBlock::new(2);
        a.push(0, 0, 1.0);
        a.push(1, 0, 2.0);
        a.push(1, 1, 1.0);
        let lay = Arc::new(SkylineLayout::new(2, &[&a]));
        let mut m = SkylineMatrix::zeros(lay.clone());
        m.add_block(1.0, &a, &lay.positions(&a).unwrap());
        assert!(matches!(m.factor(), Err(Error::SolveFailure(_))));
    }

    #[test]
    fn compress_merges_duplicates() {
        let mut a = SymBlock::new(3);
        a.push(0, 1, 1.0);
        a.push(1, 0, 2.0);
        a.push(2, 2, 1.0);
        a.push(2, 2, -1.0);
        a.compress();
        assert_eq!(a.rows, vec![1]);
        assert_eq!(a.cols, vec![0]);
        assert_eq!(a.vals, vec![3.0]);
    }
}
