/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> CscMatrix {
        CscMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> CscMatrix {
        CscMatrix {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowind: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn diagonal(d: &[f64]) -> CscMatrix {
        let mut m = CscMatrix::identity(d.len());
        m.values.copy_from_slice(d);
        m
    }

    /// Builds from (row, col, value) entries. Duplicates are summed and
    /// entries that sum to exactly zero are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> CscMatrix {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        for &(i, j, _) in &sorted {
            assert!(i < nrows && j < ncols, "entry ({}, {}) outside {}x{}", i, j, nrows, ncols);
        }
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0; ncols + 1];
        let mut rowind = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut cols = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(i);
                values.push(v);
                cols.push(j);
                last = Some((i, j));
            }
        }
        let mut keep_rows = Vec::with_capacity(rowind.len());
        let mut keep_vals = Vec::with_capacity(rowind.len());
        for ((i, j), v) in rowind.into_iter().zip(cols).zip(values) {
            if v != 0.0 {
                keep_rows.push(i);
                keep_vals.push(v);
                colptr[j + 1] += 1;
            }
        }
        for j in 0..ncols {
            colptr[j + 1] += colptr[j];
        }
        CscMatrix {
            nrows,
            ncols,
            colptr,
            rowind: keep_rows,
            values: keep_vals,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> CscMatrix {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        CscMatrix::from_triplets(nrows, ncols, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            out[i][j] += v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.colptr[j]..self.colptr[j + 1]).map(move |p| (self.rowind[p], j, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        (self.colptr[j]..self.colptr[j + 1])
            .find(|&p| self.rowind[p] == i)
            .map_or(0.0, |p| self.values[p])
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowind[p]] += self.values[p] * xj;
            }
        }
    }

    /// y = A^T x
    pub fn tmul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut s = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                s += self.values[p] * x[self.rowind[p]];
            }
            y[j] = s;
        }
    }

    pub fn transpose(&self) -> CscMatrix {
        let t: Vec<(usize, usize, f64)> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        CscMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&CscMatrix]) -> CscMatrix {
        let ncols = blocks.first().map_or(0, |b| b.ncols);
        let mut t = Vec::new();
        let mut offset = 0;
        for b in blocks {
            assert_eq!(b.ncols, ncols, "vstack column mismatch");
            t.extend(b.triplets().map(|(i, j, v)| (i + offset, j, v)));
            offset += b.nrows;
        }
        CscMatrix::from_triplets(offset, ncols, &t)
    }

    /// Rows selected by `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> CscMatrix {
        let mut new_index = vec![usize::MAX; self.nrows];
        for (k, &r) in rows.iter().enumerate() {
            new_index[r] = k;
        }
        let t: Vec<(usize, usize, f64)> = self
            .triplets()
            .filter(|&(i, _, _)| new_index[i] != usize::MAX)
            .map(|(i, j, v)| (new_index[i], j, v))
            .collect();
        CscMatrix::from_triplets(rows.len(), self.ncols, &t)
    }

    /// Entries on or above the diagonal.
    pub fn upper_triangle(&self) -> CscMatrix {
        let t: Vec<(usize, usize, f64)> = self.triplets().filter(|&(i, j, _)| i <= j).collect();
        CscMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Full symmetric matrix from one triangle (either one).
    pub fn symmetrize_from_triangle(&self) -> CscMatrix {
        let mut t = Vec::new();
        for (i, j, v) in self.triplets() {
            t.push((i, j, v));
            if i != j {
                t.push((j, i, v));
            }
        }
        CscMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    /// A <- diag(row) A diag(col)
    pub fn scale(&mut self, row: &[f64], col: &[f64]) {
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                self.values[p] *= row[self.rowind[p]] * col[j];
            }
        }
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| {
                self.values[self.colptr[j]..self.colptr[j + 1]]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.nrows];
        for (i, _, v) in self.triplets() {
            out[i] = out[i].max(v.abs());
        }
        out
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_multiply() {
        let a = CscMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, 2.0), (0, 0, 3.0), (1, 1, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 0), 4.0);
        let mut y = vec![0.0; 2];
        a.mul_vec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![4.0, 4.0]);
        let mut z = vec![0.0; 3];
        a.tmul_vec(&[1.0, 1.0], &mut z);
        assert_eq!(z, vec![4.0, -1.0, 2.0]);
        assert_eq!(a.transpose().transpose(), a);
    }
}
