//! Dense, row-sparse and banded matrix types used by the estimator.

use std::ops::{Index, IndexMut};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        out
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Column indices of a row-sparse matrix in which every row stores the same
/// number of entries. All derivative matrices of one tensor basis evaluated
/// at one set of points share a pattern.
#[derive(Debug, PartialEq, Eq)]
pub struct RowPattern {
    rows: usize,
    cols: usize,
    width: usize,
    indices: Vec<u32>,
}

impl RowPattern {
    pub fn new(rows: usize, cols: usize, width: usize, indices: Vec<u32>) -> Self {
        assert_eq!(indices.len(), rows * width);
        debug_assert!(indices.iter().all(|&c| (c as usize) < cols));
        Self { rows, cols, width, indices }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Stored entries per row.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.width..(i + 1) * self.width]
    }
}

/// Sparse matrix with a fixed number of stored entries per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pattern: Arc<RowPattern>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(pattern: Arc<RowPattern>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), pattern.rows * pattern.width);
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<RowPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.rows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.cols
    }

    pub fn row_values(&self, i: usize) -> &[f64] {
        let w = self.pattern.width;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn same_pattern(&self, other: &SparseRows) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let w = self.pattern.width;
        self.values
            .chunks_exact(w)
            .zip(self.pattern.indices.chunks_exact(w))
            .map(|(vals, cols)| vals.iter().zip(cols).map(|(v, &c)| v * x[c as usize]).sum())
            .collect()
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.nrows());
        let w = self.pattern.width;
        let mut out = vec![0.0; self.ncols()];
        for ((vals, cols), &vi) in self
            .values
            .chunks_exact(w)
            .zip(self.pattern.indices.chunks_exact(w))
            .zip(v)
        {
            if vi == 0.0 {
                continue;
            }
            for (val, &c) in vals.iter().zip(cols) {
                out[c as usize] += vi * val;
            }
        }
        out
    }

    /// `diag(s) * self`.
    pub fn scale_rows(&self, s: &[f64]) -> SparseRows {
        assert_eq!(s.len(), self.nrows());
        let w = self.pattern.width;
        let mut values = self.values.clone();
        for (chunk, &si) in values.chunks_exact_mut(w).zip(s) {
            chunk.iter_mut().for_each(|v| *v *= si);
        }
        SparseRows { pattern: Arc::clone(&self.pattern), values }
    }

    /// `self + alpha * other`, both on the same pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &SparseRows) {
        assert!(self.same_pattern(other), "sparse patterns differ");
        axpy(alpha, &other.values, &mut self.values);
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows(), self.ncols());
        for i in 0..self.nrows() {
            for (v, &c) in self.row_values(i).iter().zip(self.pattern.row(i)) {
                d[(i, c as usize)] += v;
            }
        }
        d
    }

    /// Adds `weight * selfᵀ self` into `band`, with columns renumbered by `perm`.
    pub fn accumulate_gram(&self, weight: f64, perm: &[usize], band: &mut BandedSpd) {
        let w = self.pattern.width;
        let mut mapped = vec![0usize; w];
        for (vals, cols) in self.values.chunks_exact(w).zip(self.pattern.indices.chunks_exact(w)) {
            for (m, &c) in mapped.iter_mut().zip(cols) {
                *m = perm[c as usize];
            }
            for a in 0..w {
                let va = weight * vals[a];
                if va == 0.0 {
                    continue;
                }
                let qa = mapped[a];
                for b in 0..w {
                    let qb = mapped[b];
                    if qb <= qa {
                        band.add(qa, qb, va * vals[b]);
                    }
                }
            }
        }
    }

    /// Adds `weight * (selfᵀ other + otherᵀ self)` into `band`; both
    /// matrices must share one row pattern.
    pub fn accumulate_cross(&self, other: &SparseRows, weight: f64, perm: &[usize], band: &mut BandedSpd) {
        assert!(self.same_pattern(other), "cross product needs a shared row pattern");
        let w = self.pattern.width;
        let mut mapped = vec![0usize; w];
        let rows = self.values.chunks_exact(w).zip(other.values.chunks_exact(w));
        for ((s, o), cols) in rows.zip(self.pattern.indices.chunks_exact(w)) {
            for (m, &c) in mapped.iter_mut().zip(cols) {
                *m = perm[c as usize];
            }
            for a in 0..w {
                let qa = mapped[a];
                for b in 0..w {
                    let qb = mapped[b];
                    if qb <= qa {
                        band.add(qa, qb, weight * (s[a] * o[b] + o[a] * s[b]));
                    }
                }
            }
        }
    }
}

/// Symmetric positive-definite banded matrix, lower band stored row-major.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw, "({i}, {j}) outside band {}", self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` at `(i, j)` with `j <= i`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            let o = self.offset(i, i);
            self.data[o] += v;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[self.offset(i, i)]).sum()
    }

    /// `self += alpha * other` for bands of identical shape.
    pub fn add_scaled(&mut self, alpha: f64, other: &BandedSpd) {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let a = self.data[self.offset(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let stride = bw + 1;
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            for j in k0..=i {
                let len = j - k0;
                let ri = i * stride + bw - (i - k0);
                let rj = j * stride + bw - (j - k0);
                let s = dot(&self.data[ri..ri + len], &self.data[rj..rj + len]);
                let o = i * stride + bw - (i - j);
                let v = self.data[o] - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {i} (value {v:e})"
                        )));
                    }
                    self.data[o] = v.sqrt();
                } else {
                    self.data[o] = v / self.data[j * stride + bw];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandedSpd,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let f = &self.factor;
        let (n, bw) = (f.n, f.bw);
        let stride = bw + 1;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let row = &f.data[i * stride + bw - (i - k0)..i * stride + bw];
            let s = dot(row, &x[k0..i]);
            x[i] = (x[i] - s) / f.data[i * stride + bw];
        }
        for i in (0..n).rev() {
            x[i] /= f.data[i * stride + bw];
            let xi = x[i];
            let k0 = i.saturating_sub(bw);
            let row = &f.data[i * stride + bw - (i - k0)..i * stride + bw];
            for (xk, l) in x[k0..i].iter_mut().zip(row) {
                *xk -= l * xi;
            }
        }
        x
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorise without reassociating
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> BandedSpd {
        // diagonally dominant, hence positive definite
        let mut a = BandedSpd::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a.add(i, j, if i == j { v.abs() + n as f64 } else { v });
            }
        }
        a
    }

    #[test]
    fn cholesky_solves_banded_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, bw) in &[(1, 0), (5, 1), (30, 4), (64, 63), (100, 7)] {
            let a = random_banded(n, bw, &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = a.mul_vec(&x);
            let got = a.clone().cholesky().unwrap().solve(&b);
            for (g, w) in got.iter().zip(&x) {
                assert!((g - w).abs() < 1e-10, "n={n} bw={bw}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        assert!(matches!(a.cholesky(), Err(Error::Numerical(_))));
    }

    #[test]
    fn sparse_rows_products_match_dense() {
        let pattern = Arc::new(RowPattern::new(3, 4, 2, vec![0, 1, 1, 3, 2, 3]));
        let s = SparseRows::new(pattern, vec![1.0, 2.0, -1.0, 0.5, 4.0, 3.0]);
        let d = s.to_dense();
        let x = [1.0, -2.0, 0.5, 3.0];
        assert_eq!(s.mul_vec(&x), d.mul_vec(&x));
        let v = [0.3, -1.0, 2.0];
        assert_eq!(s.tr_mul_vec(&v), d.tr_mul_vec(&v));

        let perm: Vec<usize> = (0..4).collect();
        let mut band = BandedSpd::zeros(4, 3);
        s.accumulate_gram(2.0, &perm, &mut band);
        for i in 0..4 {
            for j in 0..4 {
                let want: f64 = 2.0 * (0..3).map(|r| d[(r, i)] * d[(r, j)]).sum::<f64>();
                assert!((band.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cross_products_match_dense() {
        let pattern = Arc::new(RowPattern::new(3, 4, 2, vec![0, 1, 1, 3, 2, 3]));
        let a = SparseRows::new(pattern.clone(), vec![1.0, 2.0, -1.0, 0.5, 4.0, 3.0]);
        let b = SparseRows::new(pattern, vec![0.5, -1.0, 2.0, 1.5, -3.0, 0.25]);
        let (da, db) = (a.to_dense(), b.to_dense());
        let perm = vec![2, 0, 3, 1];
        let mut band = BandedSpd::zeros(4, 3);
        a.accumulate_cross(&b, 0.5, &perm, &mut band);
        for i in 0..4 {
            for j in 0..4 {
                let want: f64 = 0.5 * (0..3).map(|r| da[(r, i)] * db[(r, j)] + db[(r, i)] * da[(r, j)]).sum::<f64>();
                assert!((band.get(perm[i], perm[j]) - want).abs() < 1e-14);
            }
        }
    }
}
