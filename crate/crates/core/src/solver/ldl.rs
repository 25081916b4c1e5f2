//! Sparse LDL^T factorization for quasi-definite matrices, with a minimum
//! degree fill-reducing ordering.

use std::collections::BTreeSet;

use super::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum LdlError {
    NotUpperTriangular,
    ZeroPivot(usize),
    PatternChanged,
}

impl std::fmt::Display for LdlError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LdlError::NotUpperTriangular => write!(f, "matrix is not upper triangular"),
            LdlError::ZeroPivot(k) => write!(f, "zero pivot at column {}", k),
            LdlError::PatternChanged => write!(f, "sparsity pattern changed since the symbolic step"),
        }
    }
}

impl std::error::Error for LdlError {}

/// Minimum degree ordering of the symmetric pattern given by an upper
/// triangle. Ties go to the lowest index.
pub fn minimum_degree_order(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in upper.triplets() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = NONE;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if !done[v] && adj[v].len() < best_deg {
                best = v;
                best_deg = adj[v].len();
                if best_deg == 0 {
                    break;
                }
            }
        }
        done[best] = true;
        order.push(best);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[best]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&best);
        }
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    order
}

/// Factor P A P^T = L D L^T of a symmetric matrix stored as its upper triangle.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    /// Position of each input entry in the permuted upper triangle.
    entry_map: Vec<usize>,
    permuted: CscMatrix,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl LdlFactor {
    pub fn new(upper: &CscMatrix) -> Result<LdlFactor, LdlError> {
        if upper.triplets().any(|(i, j, _)| i > j) {
            return Err(LdlError::NotUpperTriangular);
        }
        let n = upper.ncols;
        let perm = minimum_degree_order(upper);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        let entries: Vec<(usize, usize, f64)> = upper
            .triplets()
            .map(|(i, j, v)| {
                let (a, b) = (iperm[i], iperm[j]);
                (a.min(b), a.max(b), v)
            })
            .collect();
        let permuted = CscMatrix::from_triplets(n, n, &entries);
        let mut entry_map = Vec::with_capacity(entries.len());
        for &(i, j, _) in &entries {
            let pos = (permuted.colptr[j]..permuted.colptr[j + 1])
                .find(|&p| permuted.rowind[p] == i)
                .unwrap_or(NONE);
            entry_map.push(pos);
        }
        let (etree, lnz) = elimination_tree(&permuted);
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz = lp[n];
        let mut f = LdlFactor {
            n,
            perm,
            entry_map,
            permuted,
            etree,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        };
        if f.entry_map.contains(&NONE) {
            // an input entry summed to zero; rebuild values from scratch
            f.entry_map = vec![NONE; upper.nnz()];
        }
        f.numeric()?;
        Ok(f)
    }

    /// Refactors with new values on the same pattern as the original input.
    pub fn refactor(&mut self, upper: &CscMatrix) -> Result<(), LdlError> {
        if upper.nnz() != self.entry_map.len() || self.entry_map.contains(&NONE) {
            *self = LdlFactor::new(upper)?;
            return Ok(());
        }
        self.permuted.values.iter_mut().for_each(|v| *v = 0.0);
        for (e, &v) in upper.values.iter().enumerate() {
            let pos = self.entry_map[e];
            self.permuted.values[pos] += v;
        }
        self.numeric()
    }

    fn numeric(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let a = &self.permuted;
        let mut y_vals = vec![0.0; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let i = a.rowind[p];
                if i == k {
                    self.d[k] = a.values[p];
                    continue;
                }
                y_vals[i] = a.values[p];
                if !y_marked[i] {
                    y_marked[i] = true;
                    elim[0] = i;
                    let mut nnz_e = 1;
                    let mut next = self.etree[i];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let slot = next_space[c];
                let yc = y_vals[c];
                for q in self.lp[c]..slot {
                    y_vals[self.li[q]] -= self.lx[q] * yc;
                }
                if slot >= self.lp[c + 1] {
                    return Err(LdlError::PatternChanged);
                }
                self.li[slot] = k;
                self.lx[slot] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[slot];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solves A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                x[self.li[q]] -= self.lx[q] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[q] * x[self.li[q]];
            }
            x[i] = s;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }

    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&d| d > 0.0).count();
        (pos, self.n - pos)
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }
}

fn elimination_tree(a: &CscMatrix) -> (Vec<usize>, Vec<usize>) {
    let n = a.ncols;
    let mut work = vec![NONE; n];
    let mut lnz = vec![0; n];
    let mut etree = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in a.colptr[j]..a.colptr[j + 1] {
            let mut i = a.rowind[p];
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }
    (etree, lnz)
}
