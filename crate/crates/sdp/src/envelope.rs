//! Envelope (skyline) Cholesky for the Schur complement.
//!
//! The Schur complement of a block-sparse SDP is itself sparse: two rows
//! interact only if they touch a common PSD block or nonnegative variable.
//! Rows are reordered with reverse Cuthill-McKee, nearly dense rows are moved
//! to the end, and the factorization only touches each row's envelope.

use std::collections::VecDeque;

/// Symmetric row permutation plus the envelope it induces.
#[derive(Debug, Clone)]
pub(crate) struct Ordering {
    /// `perm[k]` is the original row placed at position `k`.
    pub perm: Vec<usize>,
    /// `pos[i]` is the position of original row `i`.
    pub pos: Vec<usize>,
    /// First structurally nonzero column of each permuted row.
    pub first: Vec<usize>,
}

impl Ordering {
    /// Builds an ordering from the (symmetric) adjacency of the Schur pattern.
    pub fn new(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let dense_threshold = (n / 2).max(32);
        let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
        let is_dense: Vec<bool> = degree.iter().map(|&d| d > dense_threshold).collect();

        let mut visited = is_dense.clone();
        let mut order = Vec::with_capacity(n);
        loop {
            // start each component from its minimum-degree node
            let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i));
            let Some(start) = start else { break };
            let mut queue = VecDeque::from([start]);
            visited[start] = true;
            let mut component = Vec::new();
            while let Some(u) = queue.pop_front() {
                component.push(u);
                let mut next: Vec<usize> = adjacency[u].iter().copied().filter(|&v| !visited[v]).collect();
                next.sort_by_key(|&v| (degree[v], v));
                for v in next {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
            order.extend(component);
        }
        order.reverse();
        let mut dense: Vec<usize> = (0..n).filter(|&i| is_dense[i]).collect();
        dense.sort_by_key(|&i| (degree[i], i));
        order.extend(dense);

        let mut pos = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                let (a, b) = (pos[i], pos[j]);
                if a > b {
                    first[a] = first[a].min(b);
                } else {
                    first[b] = first[b].min(a);
                }
            }
        }
        Self { perm: order, pos, first }
    }

    /// Number of stored off-diagonal entries in the envelope.
    #[cfg(test)]
    pub fn envelope_size(&self) -> usize {
        self.first.iter().enumerate().map(|(i, &f)| i - f).sum()
    }
}

/// Lower triangle of a symmetric matrix over its envelope: row `i` stores
/// columns `first[i]..=i` contiguously.
#[derive(Debug, Clone)]
pub(crate) struct EnvelopeMatrix {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    pub fn zeros(first: &[usize]) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        offset.push(0);
        for (i, &f) in first.iter().enumerate() {
            offset.push(offset[i] + i - f + 1);
        }
        let data = vec![0.0; offset[first.len()]];
        Self { first: first.to_vec(), offset, data }
    }

    /// Copies the envelope of a dense row-major matrix.
    #[cfg(test)]
    pub fn from_dense(a: &[f64], first: &[usize]) -> Self {
        let n = first.len();
        let mut m = Self::zeros(first);
        for i in 0..n {
            for j in first[i]..=i {
                m.add(i, j, a[i * n + j]);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    /// Adds `v` at `(i, j)`; the pair must lie in the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(j >= self.first[i], "({i}, {j}) outside the envelope");
        self.data[self.offset[i] + j - self.first[i]] += v;
    }

    /// Entry `(i, j)`, zero outside the envelope.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] { 0.0 } else { self.data[self.offset[i] + j - self.first[i]] }
    }
}

/// Cholesky factor `L` stored in the envelope of the factored matrix, which
/// holds all of its fill.
#[derive(Debug, Clone)]
pub(crate) struct EnvelopeCholesky {
    l: EnvelopeMatrix,
    skipped: Vec<bool>,
}

impl EnvelopeCholesky {
    /// Factors `a` in place. Pivots below `rel_tol * a_ii` mark the row as
    /// dependent; its solution component is then forced to zero.
    pub fn factor(mut a: EnvelopeMatrix, rel_tol: f64) -> Self {
        let n = a.n();
        let mut skipped = vec![false; n];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let fi = a.first[i];
            let (done, rest) = a.data.split_at_mut(a.offset[i]);
            let ri = &mut rest[..i - fi + 1];
            for j in fi..i {
                if skipped[j] {
                    ri[j - fi] = 0.0;
                    continue;
                }
                let fj = a.first[j];
                let k0 = fi.max(fj);
                let rj = &done[a.offset[j]..a.offset[j + 1]];
                let dot: f64 = ri[k0 - fi..j - fi].iter().zip(&rj[k0 - fj..j - fj]).map(|(x, y)| x * y).sum();
                ri[j - fi] = (ri[j - fi] - dot) / diag[j];
            }
            let aii = ri[i - fi];
            let d = aii - ri[..i - fi].iter().map(|x| x * x).sum::<f64>();
            let scale = aii.abs().max(f64::MIN_POSITIVE);
            if !(d > rel_tol * scale) {
                skipped[i] = true;
                ri.fill(0.0);
                ri[i - fi] = 1.0;
                diag[i] = 1.0;
            } else {
                diag[i] = d.sqrt();
                ri[i - fi] = diag[i];
            }
        }
        Self { l: a, skipped }
    }

    pub fn skipped(&self) -> &[bool] {
        &self.skipped
    }

    /// Solves `L L' x = b` in place (permuted coordinates).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.n();
        for i in 0..n {
            if self.skipped[i] {
                b[i] = 0.0;
                continue;
            }
            let fi = self.l.first[i];
            let row = self.l.row(i);
            let s: f64 = row[..i - fi].iter().zip(&b[fi..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            if self.skipped[i] {
                b[i] = 0.0;
                continue;
            }
            let fi = self.l.first[i];
            let row = self.l.row(i);
            b[i] /= row[i - fi];
            let bi = b[i];
            for (bk, lk) in b[fi..i].iter_mut().zip(&row[..i - fi]) {
                *bk -= lk * bi;
            }
        }
    }
}
