//! Dense 3-way tensors and small dense matrices.
//!
//! A [`Tensor3`] of dimensions `(L1, L2, K)` is stored band-sequentially: element
//! `(l1, l2, k)` lives at offset `k*L1*L2 + l1*L2 + l2`. File I/O writes this order
//! verbatim, so the layout is part of the on-disk format.
//!
//! The mode-3 matricization maps pixel `(l1, l2)` to column `l1 + l2*L1` (the
//! column-major pixel order of the usual mode-n unfolding), so it is a permutation
//! of the band-sequential storage rather than a plain reinterpretation.

use crate::error::{invalid, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(invalid(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    /// New matrix made of the selected columns, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        Mat::from_fn(self.rows, idx.len(), |r, c| self.get(r, idx[c]))
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(invalid(format!(
                "matmul dimension mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(invalid(format!(
                "matmul_t dimension mismatch: {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(invalid(format!(
                "matvec dimension mismatch: {}x{} * {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        sq_norm(&self.data).sqrt()
    }

    pub fn project_nonneg(&self) -> Mat {
        self.map(|v| v.max(0.0))
    }

    /// Column-stacked vectorization `vec(self)`.
    pub fn vec_cols(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self.get(r, c));
            }
        }
        v
    }

    /// Inverse of [`Mat::vec_cols`].
    pub fn from_vec_cols(rows: usize, cols: usize, v: &[f64]) -> Result<Mat> {
        if v.len() != rows * cols {
            return Err(invalid(format!("vector of length {} cannot fold to {rows}x{cols}", v.len())));
        }
        Ok(Mat::from_fn(rows, cols, |r, c| v[c * rows + r]))
    }

    /// Largest eigenvalue of a symmetric positive semidefinite matrix (power iteration).
    pub fn max_eigenvalue_psd(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "max_eigenvalue_psd on non-square matrix");
        let n = self.rows;
        if n == 0 {
            return 0.0;
        }
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let y = self.matvec(&x).expect("square");
            let ny = sq_norm(&y).sqrt();
            if ny == 0.0 {
                return 0.0;
            }
            let next = dot(&x, &y) / sq_norm(&x);
            x = y.iter().map(|v| v / ny).collect();
            let done = (next - lambda).abs() <= 1e-14 * next.abs();
            lambda = next;
            if done {
                break;
            }
        }
        // Rayleigh quotient is a lower bound; the residual bounds the gap.
        let y = self.matvec(&x).expect("square");
        let rq = dot(&x, &y);
        let resid = y.iter().zip(&x).map(|(a, b)| (a - rq * b).powi(2)).sum::<f64>().sqrt();
        rq + resid
    }
}

/// Real 3-way array stored band-sequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(l1: usize, l2: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if l1 == 0 || l2 == 0 || k == 0 {
            return Err(invalid(format!("tensor dimensions must be positive, got {l1}x{l2}x{k}")));
        }
        if data.len() != l1 * l2 * k {
            return Err(invalid(format!(
                "tensor data length {} does not match {l1}x{l2}x{k}",
                data.len()
            )));
        }
        Ok(Self { dims: (l1, l2, k), data })
    }

    pub fn zeros(l1: usize, l2: usize, k: usize) -> Self {
        Self { dims: (l1, l2, k), data: vec![0.0; l1 * l2 * k] }
    }

    pub fn filled(l1: usize, l2: usize, k: usize, v: f64) -> Self {
        Self { dims: (l1, l2, k), data: vec![v; l1 * l2 * k] }
    }

    pub fn from_fn(
        l1: usize,
        l2: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(l1 * l2 * k);
        for kk in 0..k {
            for i in 0..l1 {
                for j in 0..l2 {
                    data.push(f(i, j, kk));
                }
            }
        }
        Self { dims: (l1, l2, k), data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims.2
    }

    #[inline]
    fn offset(&self, l1: usize, l2: usize, k: usize) -> usize {
        k * self.dims.0 * self.dims.1 + l1 * self.dims.1 + l2
    }

    #[inline]
    pub fn get(&self, l1: usize, l2: usize, k: usize) -> f64 {
        self.data[self.offset(l1, l2, k)]
    }

    #[inline]
    pub fn set(&mut self, l1: usize, l2: usize, k: usize, v: f64) {
        let o = self.offset(l1, l2, k);
        self.data[o] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One spectral band as an `L1*L2` row-major image.
    pub fn band(&self, k: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Spectrum at pixel `(l1, l2)`.
    pub fn pixel(&self, l1: usize, l2: usize) -> Vec<f64> {
        (0..self.dims.2).map(|k| self.get(l1, l2, k)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(invalid(format!(
                "tensor shape mismatch: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor3 { dims: self.dims, data })
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        sq_norm(&self.data).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn project_nonneg(&self) -> Tensor3 {
        self.map(|v| v.max(0.0))
    }

    /// Returns a tensor whose channels are `self`'s channels reordered by `perm`
    /// (output channel `n` is input channel `perm[n]`).
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Tensor3> {
        let (l1, l2, k) = self.dims;
        if perm.len() != k || perm.iter().any(|&p| p >= k) {
            return Err(invalid(format!("invalid channel permutation {perm:?} for {k} channels")));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.band(p));
        }
        Tensor3::new(l1, l2, k, data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `T ×₃ M`: left-multiplies `M` (J×K) into every spectrum of `T`.
pub fn mode3_mul(t: &Tensor3, m: &Mat) -> Result<Tensor3> {
    let (l1, l2, k) = t.dims();
    if m.cols() != k {
        return Err(invalid(format!(
            "mode-3 product: matrix has {} columns but tensor has {k} channels",
            m.cols()
        )));
    }
    let n = l1 * l2;
    let j_out = m.rows();
    let mut out = vec![0.0; n * j_out];
    for j in 0..j_out {
        let dst = &mut out[j * n..(j + 1) * n];
        for kk in 0..k {
            let w = m.get(j, kk);
            if w == 0.0 {
                continue;
            }
            for (d, &s) in dst.iter_mut().zip(t.band(kk)) {
                *d += w * s;
            }
        }
    }
    Tensor3::new(l1, l2, j_out, out)
}

/// Mode-3 unfolding: a `K × (L1·L2)` matrix whose column `l1 + l2·L1` is the spectrum
/// of pixel `(l1, l2)`.
pub fn mode3_matricize(t: &Tensor3) -> Mat {
    let (l1, l2, k) = t.dims();
    let n = l1 * l2;
    let mut data = vec![0.0; k * n];
    for kk in 0..k {
        let band = t.band(kk);
        let row = &mut data[kk * n..(kk + 1) * n];
        for i in 0..l1 {
            for j in 0..l2 {
                row[i + j * l1] = band[i * l2 + j];
            }
        }
    }
    Mat { rows: k, cols: n, data }
}

/// Inverse of [`mode3_matricize`].
pub fn fold3(m: &Mat, l1: usize, l2: usize) -> Result<Tensor3> {
    if l1 == 0 || l2 == 0 || m.cols() != l1 * l2 {
        return Err(invalid(format!(
            "cannot fold a {}x{} matrix into {l1}x{l2} pixels",
            m.rows(),
            m.cols()
        )));
    }
    let k = m.rows();
    let n = l1 * l2;
    let mut data = vec![0.0; k * n];
    for kk in 0..k {
        let row = m.row(kk);
        let band = &mut data[kk * n..(kk + 1) * n];
        for i in 0..l1 {
            for j in 0..l2 {
                band[i * l2 + j] = row[i + j * l1];
            }
        }
    }
    Tensor3::new(l1, l2, k, data)
}

pub fn project_nonneg(t: &Tensor3) -> Tensor3 {
    t.project_nonneg()
}

/// Scalar shrinkage `η_c(x)`.
#[inline]
pub fn shrink(x: f64, c: f64) -> f64 {
    if x >= c {
        x - c
    } else if x <= -c {
        x + c
    } else {
        0.0
    }
}

/// Elementwise soft-thresholding `η_c(T)`.
pub fn soft_threshold(t: &Tensor3, c: f64) -> Result<Tensor3> {
    if !(c >= 0.0) {
        return Err(invalid(format!("soft-threshold level must be nonnegative, got {c}")));
    }
    Ok(t.map(|v| shrink(v, c)))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |r, c| a.get(r / br, c / bc) * b.get(r % br, c % bc))
}

/// Cholesky factor `G = L·Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(g: &Mat) -> Result<Self> {
        let (n, nc) = g.shape();
        if n != nc {
            return Err(invalid(format!("Cholesky of non-square {n}x{nc} matrix")));
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = g.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = g.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `G x = b` in place.
    pub fn solve_vec_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `G X = H` column by column.
    pub fn solve(&self, h: &Mat) -> Result<Mat> {
        if h.rows() != self.n {
            return Err(invalid(format!(
                "right-hand side has {} rows, system has {}",
                h.rows(),
                self.n
            )));
        }
        let mut out = Mat::zeros(h.rows(), h.cols());
        let mut col = vec![0.0; self.n];
        for c in 0..h.cols() {
            for (r, v) in col.iter_mut().enumerate() {
                *v = h.get(r, c);
            }
            self.solve_vec_in_place(&mut col);
            out.set_col(c, &col);
        }
        Ok(out)
    }
}

/// Solves `G X = H` for symmetric positive definite `G` by Cholesky factorization.
pub fn solve_spd(g: &Mat, h: &Mat) -> Result<Mat> {
    Cholesky::factor(g)?.solve(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, l1: usize, l2: usize, k: usize) -> Tensor3 {
        Tensor3::from_fn(l1, l2, k, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn layout_is_band_sequential() {
        let t = Tensor3::from_fn(2, 3, 2, |i, j, k| (100 * k + 10 * i + j) as f64);
        assert_eq!(t.data()[1 * 6 + 1 * 3 + 2], 112.0);
        assert_eq!(t.get(1, 2, 1), 112.0);
    }

    #[test]
    fn mode3_identity_and_sum_row() {
        let t = Tensor3::new(1, 1, 2, vec![0.3, 0.7]).unwrap();
        let out = mode3_mul(&t, &Mat::identity(2)).unwrap();
        assert_eq!(out.data(), &[0.3, 0.7]);
        let ones = Mat::new(1, 2, vec![1.0, 1.0]).unwrap();
        let out = mode3_mul(&t, &ones).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mode3_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rand_tensor(&mut rng, 2, 2, 3);
        let m = rand_mat(&mut rng, 4, 3);
        let out = mode3_mul(&t, &m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for jj in 0..4 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += m.get(jj, k) * t.get(i, j, k);
                    }
                    assert!((out.get(i, j, jj) - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mode3_rejects_mismatch() {
        let t = Tensor3::zeros(2, 2, 3);
        assert!(matches!(mode3_mul(&t, &Mat::zeros(2, 2)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matricize_small_case() {
        // 1x2x2 tensor: pixel (0,0) = (a, c), pixel (0,1) = (b, d)
        let t = Tensor3::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = mode3_matricize(&t);
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.row(0), &[1.0, 2.0]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn matricize_uses_column_major_pixel_index() {
        let t = Tensor3::from_fn(3, 2, 1, |i, j, _| (10 * i + j) as f64);
        let m = mode3_matricize(&t);
        // column l1 + l2*L1
        assert_eq!(m.get(0, 2 + 1 * 3), 21.0);
        assert_eq!(m.get(0, 1), 10.0);
    }

    #[test]
    fn fold_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = rand_tensor(&mut rng, 3, 4, 5);
        let back = fold3(&mode3_matricize(&t), 3, 4).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn fold_rejects_non_factorable() {
        assert!(fold3(&Mat::zeros(2, 7), 2, 3).is_err());
    }

    #[test]
    fn mode3_equals_folded_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_tensor(&mut rng, 3, 4, 5);
        let m = rand_mat(&mut rng, 2, 5);
        let a = mode3_mul(&t, &m).unwrap();
        let b = fold3(&m.matmul(&mode3_matricize(&t)).unwrap(), 3, 4).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn nonneg_projection() {
        let t = Tensor3::new(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(project_nonneg(&t).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor3::new(1, 1, 2, vec![0.5, 3.0]).unwrap();
        assert_eq!(project_nonneg(&pos), pos);
    }

    #[test]
    fn soft_threshold_branches() {
        assert!((shrink(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(shrink(0.3, 0.5), 0.0);
        assert_eq!(shrink(-0.5, 0.5), 0.0);
        assert!((shrink(-1.0, 0.5) + 0.5).abs() < 1e-15);
        let t = Tensor3::zeros(1, 1, 1);
        assert!(soft_threshold(&t, -0.1).is_err());
    }

    #[test]
    fn kron_examples() {
        let ones = Mat::new(1, 2, vec![1.0, 1.0]).unwrap();
        let k = kron(&Mat::identity(2), &ones);
        assert_eq!(k, Mat::from_rows(&[[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_mat(&mut rng, 3, 2);
        assert_eq!(kron(&a, &Mat::identity(1)), a);
    }

    #[test]
    fn kron_vec_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 2, 2);
        let x = rand_mat(&mut rng, 2, 3);
        let b = rand_mat(&mut rng, 3, 2);
        let lhs = a.matmul(&x).unwrap().matmul(&b).unwrap().vec_cols();
        let rhs = kron(&b.transpose(), &a).matvec(&x.vec_cols()).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            assert!((l - r).abs() < 1e-13);
        }
    }

    #[test]
    fn spd_solve_scaled_identity() {
        let g = Mat::identity(3).scale(2.0);
        let h = Mat::new(3, 1, vec![2.0, -4.0, 1.0]).unwrap();
        let x = solve_spd(&g, &h).unwrap();
        for (a, b) in x.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spd_solve_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1, 4, 17, 60] {
            let m = rand_mat(&mut rng, n, n);
            let g = m.transpose().matmul(&m).unwrap().add(&Mat::identity(n)).unwrap();
            let h = rand_mat(&mut rng, n, 3);
            let x = solve_spd(&g, &h).unwrap();
            let r = g.matmul(&x).unwrap().sub(&h).unwrap().frobenius_norm() / h.frobenius_norm();
            assert!(r <= 1e-10, "n={n} residual {r}");
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let g = Mat::diag(&[1.0, -1.0]);
        let err = solve_spd(&g, &Mat::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }), "{err}");
    }

    #[test]
    fn power_iteration_upper_bounds_spectrum() {
        let g = Mat::diag(&[3.0, 1.0, 0.5]);
        let l = g.max_eigenvalue_psd();
        assert!(l >= 3.0 && l < 3.0 + 1e-6, "{l}");
    }
}
