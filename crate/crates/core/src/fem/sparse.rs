use std::sync::Arc;

use rayon::prelude::*;

/// Row offsets and sorted column indices of a CSR matrix. Matrices assembled
/// on the same mesh share one pattern, which makes linear combinations a
/// plain loop over the value arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern from per-row column lists (sorted and deduplicated here).
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.iter().all(|&c| c < n));
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        SparsityPattern { n, row_ptr, col_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Position of entry (i, j) in the value array.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
}

/// Square sparse matrix in compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

const PAR_ROWS: usize = 4096;

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        CsrMatrix {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn from_parts(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Self {
        assert_eq!(pattern.nnz(), values.len(), "value array does not match pattern");
        CsrMatrix { pattern, values }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let mut m = CsrMatrix::zeros(pattern);
        for &(i, j, v) in triplets {
            let s = m.pattern.slot(i, j).expect("slot exists");
            m.values[s] += v;
        }
        m
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let trip: Vec<(usize, usize, f64)> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                assert_eq!(r.len(), n, "dense matrix must be square");
                r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (i, j, *v))
            })
            .collect();
        CsrMatrix::from_triplets(n, &trip)
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        CsrMatrix::from_triplets(n, &trip)
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    /// Iterates `(column, value)` over the stored entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.pattern.row_ptr[i], self.pattern.row_ptr[i + 1]);
        self.pattern.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// y = A x
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        let vals = &self.values;
        let row_dot = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in rp[i]..rp[i + 1] {
                s += vals[k] * x[ci[k]];
            }
            s
        };
        if self.dim() >= PAR_ROWS {
            y.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
                for (o, yi) in chunk.iter_mut().enumerate() {
                    *yi = row_dot(c * 1024 + o);
                }
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// y = Aᵀ x
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// self += c · other
    pub fn add_scaled(&mut self, c: f64, other: &CsrMatrix) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        if Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern {
            for (a, b) in self.values.iter_mut().zip(&other.values) {
                *a += c * b;
            }
            return;
        }
        let n = self.dim();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut r: Vec<usize> = self.row(i).map(|(j, _)| j).collect();
            r.extend(other.row(i).map(|(j, _)| j));
            rows.push(r);
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let mut merged = CsrMatrix::zeros(pattern);
        for i in 0..n {
            for (j, v) in self.row(i) {
                let s = merged.pattern.slot(i, j).unwrap();
                merged.values[s] += v;
            }
            for (j, v) in other.row(i) {
                let s = merged.pattern.slot(i, j).unwrap();
                merged.values[s] += c * v;
            }
        }
        *self = merged;
    }

    /// Σ cₖ Aₖ over matrices of equal dimension.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let (c0, a0) = terms.first().expect("at least one term");
        let mut out = (*a0).clone();
        out.scale(*c0);
        for (c, a) in &terms[1..] {
            out.add_scaled(*c, a);
        }
        out
    }

    /// Drops explicitly stored zeros.
    pub fn finalize(&self) -> CsrMatrix {
        let n = self.dim();
        let mut rows = vec![Vec::new(); n];
        for (i, r) in rows.iter_mut().enumerate() {
            r.extend(self.row(i).filter(|(_, v)| *v != 0.0).map(|(j, _)| j));
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let mut out = CsrMatrix::zeros(pattern);
        for i in 0..n {
            for (j, v) in self.row(i).filter(|(_, v)| *v != 0.0) {
                let s = out.pattern.slot(i, j).unwrap();
                out.values[s] = v;
            }
        }
        out
    }

    pub fn has_explicit_zeros(&self) -> bool {
        self.values.contains(&0.0)
    }

    /// Largest |A_ij − A_ji| relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.asymmetry() <= rel_tol
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matvec_and_transpose() {
        let m = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 3.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 1.0]), vec![1.0, 5.0]);
        assert!(!m.is_symmetric(1e-14));
    }

    #[test]
    fn add_with_different_patterns() {
        let mut a = CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = CsrMatrix::from_dense(&[vec![0.0, 2.0], vec![0.0, 0.0]]);
        a.add_scaled(0.5, &b);
        assert_eq!(a.to_dense(), vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn finalize_prunes_zeros() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 0.0), (1, 1, 2.0)]);
        assert!(m.has_explicit_zeros());
        let f = m.finalize();
        assert!(!f.has_explicit_zeros());
        assert_eq!(f.nnz(), 2);
        assert_eq!(f.to_dense(), m.to_dense());
    }
}
