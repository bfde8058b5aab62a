//! Truncated Hilbert-space vectors and operators.
//!
//! Everything lives at an explicit truncation level `n`: a vector is its first
//! `n` coordinates in the fixed orthonormal basis and an operator is the
//! corresponding `n x n` block. Indices are 0-based here; the file formats in
//! the companion crate translate to the 1-based convention.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut, Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::C64;

/// Default tolerance for symmetry and PSD checks on unit-scaled matrices.
pub const PSD_TOL: f64 = 1e-10;

/// Split of `{0..n}` into cone coordinates `I` and free coordinates `J`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IndexPartition {
    n: usize,
    cone: Vec<usize>,
    free: Vec<usize>,
}

impl IndexPartition {
    /// Builds a partition from explicit (0-based) index sets.
    pub fn new(n: usize, cone: &[usize], free: &[usize]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("n must be positive".into()));
        }
        let mut seen = vec![false; n];
        for &k in cone.iter().chain(free) {
            if k >= n {
                return Err(Error::IndexOutOfRange { index: k, n });
            }
            if seen[k] {
                return Err(Error::InvalidPartition(format!("index {k} listed twice")));
            }
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {k} is in neither I nor J")));
        }
        let mut cone = cone.to_vec();
        let mut free = free.to_vec();
        cone.sort_unstable();
        free.sort_unstable();
        Ok(Self { n, cone, free })
    }

    /// Partition with `I = {0..n_cone}` and `J = {n_cone..n}`.
    pub fn leading_cone(n: usize, n_cone: usize) -> Result<Self> {
        if n_cone > n {
            return Err(Error::IndexOutOfRange { index: n_cone, n });
        }
        let cone: Vec<usize> = (0..n_cone).collect();
        let free: Vec<usize> = (n_cone..n).collect();
        Self::new(n, &cone, &free)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The cone index set `I`.
    pub fn cone(&self) -> &[usize] {
        &self.cone
    }

    /// The free index set `J`.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn is_cone(&self, k: usize) -> bool {
        self.cone.binary_search(&k).is_ok()
    }
}

macro_rules! coord_vec {
    ($name:ident, $scalar:ty) => {
        #[derive(Debug, Clone, PartialEq)]
        #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
        pub struct $name(Vec<$scalar>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![<$scalar>::default(); n])
            }

            pub fn into_inner(self) -> Vec<$scalar> {
                self.0
            }
        }

        impl From<Vec<$scalar>> for $name {
            fn from(v: Vec<$scalar>) -> Self {
                Self(v)
            }
        }

        impl From<&[$scalar]> for $name {
            fn from(v: &[$scalar]) -> Self {
                Self(v.to_vec())
            }
        }

        impl Deref for $name {
            type Target = [$scalar];
            fn deref(&self) -> &[$scalar] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [$scalar] {
                &mut self.0
            }
        }

        impl FromIterator<$scalar> for $name {
            fn from_iter<It: IntoIterator<Item = $scalar>>(iter: It) -> Self {
                Self(iter.into_iter().collect())
            }
        }
    };
}

coord_vec!(RVec, f64);
coord_vec!(CVec, C64);

impl RVec {
    /// The `k`-th basis vector `e_k` in dimension `n`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v[k] = 1.0;
        v
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|x| x * x).sum())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn to_complex(&self) -> CVec {
        self.iter().map(|&x| C64::new(x, 0.0)).collect()
    }
}

impl CVec {
    pub fn conj(&self) -> CVec {
        self.iter().map(|z| z.conj()).collect()
    }

    /// Squared Hermitian norm.
    pub fn norm_sqr(&self) -> f64 {
        self.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn re(&self) -> RVec {
        self.iter().map(|z| z.re).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Dense real matrix, row-major; row index is the output coordinate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    /// Outer product `a b^T`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                m[(i, j)] = x * y;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &RMat) -> RMat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = RMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> RVec {
        assert_eq!(self.cols, x.len(), "apply shape mismatch");
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply_complex(&self, x: &[C64]) -> CVec {
        assert_eq!(self.cols, x.len(), "apply shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| b * a).sum())
            .collect()
    }

    pub fn add(&self, other: &RMat) -> RMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        RMat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &RMat) -> RMat {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> RMat {
        RMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &RMat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Extracts the sub-matrix on rows `rs` and columns `cs`.
    pub fn submatrix(&self, rs: &[usize], cs: &[usize]) -> RMat {
        let mut out = RMat::zeros(rs.len(), cs.len());
        for (a, &i) in rs.iter().enumerate() {
            for (b, &j) in cs.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|a| a * a).sum())
    }

    /// Euclidean norm of row `i`.
    pub fn row_norm(&self, i: usize) -> f64 {
        libm::sqrt(self.row(i).iter().map(|a| a * a).sum())
    }

    /// Operator (spectral) norm, the largest singular value.
    pub fn op_norm(&self) -> Result<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(0.0);
        }
        let gram = self.transpose().matmul(self);
        let eig = sym_eigen(&gram)?;
        let top = eig.values.iter().fold(0.0_f64, |m, &v| m.max(v));
        Ok(libm::sqrt(top))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for RMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn check_indices(k: &[usize], n: usize) -> Result<()> {
    match k.iter().find(|&&i| i >= n) {
        Some(&index) => Err(Error::IndexOutOfRange { index, n }),
        None => Ok(()),
    }
}

/// Coordinate projection `pi_K`: keeps coordinates in `K`, zeroes the rest.
pub fn project<T: Copy + Default>(x: &[T], k: &[usize]) -> Result<Vec<T>> {
    check_indices(k, x.len())?;
    let mut out = vec![T::default(); x.len()];
    for &i in k {
        out[i] = x[i];
    }
    Ok(out)
}

/// Operator block `A_KL = pi_K A |_{H_L}`, embedded back as an `n x n` matrix.
pub fn block(a: &RMat, k: &[usize], l: &[usize]) -> Result<RMat> {
    check_indices(k, a.rows())?;
    check_indices(l, a.cols())?;
    let mut out = RMat::zeros(a.rows(), a.cols());
    for &i in k {
        for &j in l {
            out[(i, j)] = a[(i, j)];
        }
    }
    Ok(out)
}

/// The pairing `<a, conj(b)>` of the complexified space, i.e. the plain
/// bilinear sum `sum_k a_k b_k`. This is the pairing used by the Riccati
/// vector fields, where the second slot always carries `conj(psi)`.
pub fn cpair(a: &[C64], b: &[C64]) -> Result<C64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Hermitian inner product, conjugate-linear in the second argument.
pub fn hermitian_inner(a: &[C64], b: &[C64]) -> Result<C64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y.conj()).sum())
}

/// Membership in the characteristic domain: `Re u_I <= tol`, `|Re u_J| <= tol`.
pub fn in_u(u: &[C64], p: &IndexPartition, tol: f64) -> Result<bool> {
    Ok(first_outside_u(u, p, tol)?.is_none())
}

/// The first coordinate violating the characteristic-domain conditions.
pub fn first_outside_u(u: &[C64], p: &IndexPartition, tol: f64) -> Result<Option<usize>> {
    if u.len() != p.n() {
        return Err(Error::DimensionMismatch { expected: p.n(), found: u.len() });
    }
    let bad_cone = p.cone().iter().copied().find(|&i| u[i].re > tol);
    let bad_free = p.free().iter().copied().find(|&j| u[j].re.abs() > tol);
    Ok(match (bad_cone, bad_free) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

pub fn trace(a: &RMat) -> f64 {
    (0..a.rows().min(a.cols())).map(|i| a[(i, i)]).sum()
}

/// Eigen-decomposition of a symmetric matrix; eigenvectors are the columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: RMat,
}

/// Symmetric eigendecomposition of `(A + A^T)/2`.
pub fn sym_eigen(a: &RMat) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.rows(), found: a.cols() });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(SymEigen { values: Vec::new(), vectors: RMat::zeros(0, 0) });
    }
    let m = a.to_nalgebra();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolver)?;
    let mut vectors = RMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            vectors[(i, j)] = eig.eigenvectors[(i, j)];
        }
    }
    Ok(SymEigen { values: eig.eigenvalues.iter().copied().collect(), vectors })
}

/// Largest absolute asymmetry `max |A - A^T|`.
pub fn asymmetry(a: &RMat) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..a.rows() {
        for j in (i + 1)..a.cols() {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Smallest eigenvalue of the symmetric part (`+inf` for an empty matrix).
pub fn min_eigenvalue(a: &RMat) -> Result<f64> {
    Ok(sym_eigen(a)?.values.iter().fold(f64::INFINITY, |m, &v| m.min(v)))
}

/// True iff `A` is symmetric within `tol` and its symmetric part has no
/// eigenvalue below `-tol`.
pub fn psd_check(a: &RMat, tol: f64) -> Result<bool> {
    if asymmetry(a) > tol {
        return Ok(false);
    }
    Ok(min_eigenvalue(a)? >= -tol)
}

/// Symmetric PSD square root by eigendecomposition. Eigenvalues below the
/// solver's resolution `n eps max|lambda|` (and negative ones within `tol`)
/// count as zero.
pub fn psd_sqrt(a: &RMat, tol: f64) -> Result<RMat> {
    let asym = asymmetry(a);
    let eig = sym_eigen(a)?;
    let min = eig.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if asym > tol || min < -tol {
        return Err(Error::NotPsd { asymmetry: asym, min_eigenvalue: min });
    }
    let n = a.rows();
    let top = eig.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let floor = n as f64 * f64::EPSILON * top;
    let roots: Vec<f64> = eig.values.iter().map(|&v| if v <= floor { 0.0 } else { libm::sqrt(v) }).collect();
    let mut out = RMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (k, r) in roots.iter().enumerate() {
                s += eig.vectors[(i, k)] * r * eig.vectors[(j, k)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Matrix exponential by scaling and squaring of a Taylor polynomial.
pub fn expm(a: &RMat) -> RMat {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.rows();
    let norm = (0..n)
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    // scale so that the 1-norm is at most 1/2
    let mut squarings = 0u32;
    let mut s = 1.0;
    while norm * s > 0.5 {
        s *= 0.5;
        squarings += 1;
    }
    let scaled = a.scale(s);
    let mut term = RMat::identity(n);
    let mut sum = RMat::identity(n);
    for k in 1..=20 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        sum.axpy(1.0, &term);
        if term.max_abs() <= f64::EPSILON * sum.max_abs() * 1e-3 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}
