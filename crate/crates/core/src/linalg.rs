//! Grids, small symmetric matrices and sampled paths.
//!
//! Matrices here are tiny (the estimators target `d <= 8`), so everything is
//! plain `Vec` storage and a cyclic Jacobi eigensolver.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative (to the trace) tolerance below which a negative eigenvalue is still PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Relative asymmetry tolerated when building a [`SymMatrix`] from dense rows.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Equidistant observation grid `t_m = m / n` on `[0, T]`.
///
/// Only `(n, T)` is stored; times are always recomputed from the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    n: u64,
    horizon: T,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(n: u64, horizon: T) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams(
                "samples per unit time must be positive".into(),
            ));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidParams(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Self { n, horizon })
    }

    /// Samples per unit time.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// `floor(n T)`, snapping products within `1e-9` of an integer.
    pub fn increments(&self) -> usize {
        let x = self.n as f64 * self.horizon.as_f64();
        let r = x.round();
        if (x - r).abs() <= 1e-9 * x.max(1.0) {
            r as usize
        } else {
            x.floor() as usize
        }
    }

    /// Number of grid points, `floor(n T) + 1`.
    pub fn count(&self) -> usize {
        self.increments() + 1
    }

    pub fn time(&self, m: usize) -> T {
        T::count(m) / T::count(self.n as usize)
    }

    pub fn spacing(&self) -> T {
        T::one() / T::count(self.n as usize)
    }

    /// Whether `n T` is an integer, so the grid covers `[0, T]` exactly.
    pub fn is_whole(&self) -> bool {
        let x = self.n as f64 * self.horizon.as_f64();
        (x - self.increments() as f64).abs() <= 1e-9 * x.max(1.0)
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: T) -> usize {
        let idx = (t * T::count(self.n as usize))
            .round()
            .to_f64()
            .unwrap_or(0.0);
        (idx.max(0.0) as usize).min(self.increments())
    }
}

/// Dense row-major matrix, used for the non-symmetric parts of the model (`M`, Brownian increments).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |acc, j| acc + self[(i, j)] * v[j]))
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + other[(i, j)])
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn frobenius(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric `d x d` matrix with a single packed upper-triangle storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    data: Vec<T>,
}

/// Position of `(i, j)`, `i <= j`, in the packed upper triangle.
#[inline]
pub fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * dim - i + 1) / 2 + (j - i)
}

/// Number of packed entries of a symmetric `d x d` matrix.
#[inline]
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Upper-triangle `(i, j)` pairs in packed order.
pub fn upper_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(packed_len(dim));
    for i in 0..dim {
        for j in i..dim {
            out.push((i, j));
        }
    }
    out
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![T::one(); dim])
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn filled(dim: usize, v: T) -> Self {
        Self {
            dim,
            data: vec![v; packed_len(dim)],
        }
    }

    /// Packed upper-triangle constructor (row-major over `i <= j`).
    pub fn from_packed(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != packed_len(dim) {
            return Err(Error::DimensionMismatch(format!(
                "packed length {} does not match dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    /// Builds from dense rows, rejecting asymmetry above `1e-12` relative.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::from_dense(&Matrix::from_rows(rows)?)
    }

    pub fn from_dense(m: &Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch("matrix is not square".into()));
        }
        let d = m.rows();
        let scale = m.frobenius().max(T::min_positive_value());
        let mut worst = T::zero();
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if worst > T::lit(SYMMETRY_TOL) * scale {
            return Err(Error::NonSymmetric {
                asymmetry: worst.as_f64(),
            });
        }
        Ok(Self::from_dense_symmetrized(m))
    }

    /// `(m + m^T) / 2`.
    pub fn from_dense_symmetrized(m: &Matrix<T>) -> Self {
        let d = m.rows();
        let half = T::lit(0.5);
        let mut out = Self::zeros(d);
        for i in 0..d {
            out.set(i, i, m[(i, i)]);
            for j in (i + 1)..d {
                out.set(i, j, half * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = packed_index(self.dim, i, j);
        self.data[k] = v;
    }

    pub fn packed(&self) -> &[T] {
        &self.data
    }

    pub fn packed_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn to_dense(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn trace(&self) -> T {
        (0..self.dim).fold(T::zero(), |acc, i| acc + self.get(i, i))
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius(&self) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Eigen-decomposition; see [`eigen_sym`].
    pub fn eigen(&self) -> SymEigen<T> {
        eigen_sym(self)
    }

    /// Smallest eigenvalue is at least `-PSD_TOL * trace`.
    pub fn is_psd(&self) -> bool {
        let eig = self.eigen();
        let floor = psd_floor(self, &eig.values);
        eig.values.iter().all(|&l| l >= floor)
    }
}

/// Eigenvalues with the matching eigenvectors stored as matrix columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymEigen<T> {
    /// `V diag(f(lambda)) V^T`.
    pub fn reassemble(&self, f: impl Fn(T) -> T) -> SymMatrix<T> {
        let d = self.values.len();
        let mapped: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut acc = T::zero();
                for (k, &l) in mapped.iter().enumerate() {
                    acc += self.vectors[(i, k)] * l * self.vectors[(j, k)];
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn eigen_sym<T: Scalar>(a: &SymMatrix<T>) -> SymEigen<T> {
    let d = a.dim();
    let mut m = a.to_dense();
    let mut v = Matrix::identity(d);
    let scale = a.frobenius();
    let eps = T::epsilon();
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..d {
            for q in (p + 1)..d {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= eps * eps * scale || off == T::zero() {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let two = T::lit(2.0);
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = if theta >= T::zero() {
                    T::one() / (theta + (theta * theta + T::one()).sqrt())
                } else {
                    -T::one() / (-theta + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let kp = m[(k, p)];
                    let kq = m[(k, q)];
                    m[(k, p)] = c * kp - s * kq;
                    m[(k, q)] = s * kp + c * kq;
                }
                for k in 0..d {
                    let pk = m[(p, k)];
                    let qk = m[(q, k)];
                    m[(p, k)] = c * pk - s * qk;
                    m[(q, k)] = s * pk + c * qk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..d {
                    let kp = v[(k, p)];
                    let kq = v[(k, q)];
                    v[(k, p)] = c * kp - s * kq;
                    v[(k, q)] = s * kp + c * kq;
                }
            }
        }
    }
    SymEigen {
        values: (0..d).map(|i| m[(i, i)]).collect(),
        vectors: v,
    }
}

/// Lowest eigenvalue still accepted as PSD: `-PSD_TOL * |trace|`, widened by round-off.
fn psd_floor<T: Scalar>(a: &SymMatrix<T>, values: &[T]) -> T {
    let spread = values.iter().fold(T::zero(), |acc, &l| acc.max(l.abs()));
    -(T::lit(PSD_TOL) * a.trace().abs() + T::lit(16.0) * T::epsilon() * spread)
}

/// Unique PSD square root by eigendecomposition.
///
/// Eigenvalues in `[-tol * trace, 0)` are clipped to zero.
pub fn matrix_sqrt_psd<T: Scalar>(a: &SymMatrix<T>) -> Result<SymMatrix<T>> {
    let eig = a.eigen();
    let floor = psd_floor(a, &eig.values);
    if let Some(&bad) = eig.values.iter().find(|&&l| l < floor) {
        return Err(Error::NotPsd {
            eigenvalue: bad.as_f64(),
        });
    }
    Ok(eig.reassemble(|l| l.max(T::zero()).sqrt()))
}

/// Projection onto the PSD cone by clipping negative eigenvalues.
///
/// Returns the projected matrix and the absolute eigenvalue mass removed.
/// Inputs that are already PSD (up to round-off) come back unchanged.
pub fn psd_project<T: Scalar>(a: &SymMatrix<T>) -> (SymMatrix<T>, T) {
    let eig = a.eigen();
    let spread = eig
        .values
        .iter()
        .fold(T::zero(), |acc, &l| acc.max(l.abs()));
    let roundoff = T::lit(16.0) * T::epsilon() * spread;
    let clipped = eig
        .values
        .iter()
        .filter(|&&l| l < -roundoff)
        .fold(T::zero(), |acc, &l| acc - l);
    if clipped == T::zero() {
        return (a.clone(), T::zero());
    }
    (eig.reassemble(|l| l.max(T::zero())), clipped)
}

/// Discrete observation of a `d`-dimensional path on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath<T> {
    grid: TimeGrid<T>,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> SampledPath<T> {
    /// `values` is row-major: one `dim`-vector per grid point.
    pub fn new(grid: TimeGrid<T>, dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch(
                "path dimension must be positive".into(),
            ));
        }
        if values.len() != grid.count() * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values ({} points x {dim}), got {}",
                grid.count() * dim,
                grid.count(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `Y_{t_m} - Y_{t_{m-1}}` written into `out`, for `m >= 1`.
    #[inline]
    pub fn increment_into(&self, m: usize, out: &mut [T]) {
        let (prev, cur) = (self.row(m - 1), self.row(m));
        for ((o, &a), &b) in out.iter_mut().zip(cur).zip(prev) {
            *o = a - b;
        }
    }

    /// One coordinate as a one-dimensional path.
    pub fn component(&self, i: usize) -> SampledPath<T> {
        let values = (0..self.len()).map(|m| self.row(m)[i]).collect();
        SampledPath {
            grid: self.grid,
            dim: 1,
            values,
        }
    }
}

/// Time-indexed sequence of symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrixPath<T> {
    times: Vec<T>,
    values: Vec<SymMatrix<T>>,
}

impl<T: Scalar> SymMatrixPath<T> {
    pub fn new(times: Vec<T>, values: Vec<SymMatrix<T>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams(
                "times must be strictly increasing".into(),
            ));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|v| v.dim() != first.dim()) {
                return Err(Error::DimensionMismatch("mixed matrix dimensions".into()));
            }
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[SymMatrix<T>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.dim())
    }

    /// Series of one entry over time.
    pub fn entry_series(&self, i: usize, j: usize) -> Vec<T> {
        self.values.iter().map(|v| v.get(i, j)).collect()
    }

    /// Value at the stored time nearest to `t`.
    pub fn nearest(&self, t: T) -> &SymMatrix<T> {
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.times.len() => self.times.len() - 1,
            Err(i) => {
                if t - self.times[i - 1] <= self.times[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        };
        &self.values[idx]
    }
}
