//! Dense matrices, element-wise absolute values and symmetric eigenvalues.
//!
//! `Mat` is a thin validated wrapper over [`nalgebra::DMatrix`]; arithmetic is
//! delegated to nalgebra through [`Mat::as_dmatrix`]. `SymMat` adds the
//! symmetry invariant that every definiteness decision in the crate relies on.
//! Eigenvalues of symmetric matrices come from a cyclic Jacobi iteration
//! (matrices here are at most a few dozen rows).

use std::fmt;

use nalgebra::DMatrix;
use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::error::{invalid, Error, Result};

/// Relative tolerance of the symmetry invariant of [`SymMat`].
pub const SYMMETRY_TOL: f64 = 1e-12;

const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// A dense real matrix with finite entries and at least one row and column.
#[derive(Clone, PartialEq)]
pub struct Mat(DMatrix<f64>);

impl Mat {
    /// Wraps an nalgebra matrix, rejecting empty shapes and non-finite entries.
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::Dimension("matrix must have at least one row and column".into()));
        }
        if inner.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix entries must be finite"));
        }
        Ok(Self(inner))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != ncols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_row_slice(nrows, ncols, &flat)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be nonempty");
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix shape must be nonempty");
        Self(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Element-wise absolute value `[Ā]_ij = |A_ij|`.
    pub fn abs(&self) -> Self {
        Self(self.0.abs())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    /// Rows as nested vectors, row-major.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.0.row(i).iter().copied().collect()).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols());
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }
}

/// Element-wise absolute value of a matrix.
pub fn elementwise_abs(a: &Mat) -> Mat {
    a.abs()
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{:?}", self.to_rows())
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows()))?;
        for row in self.to_rows() {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

/// A square matrix that is symmetric up to [`SYMMETRY_TOL`] (relative).
#[derive(Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    /// Accepts `m` only if it is already symmetric within tolerance.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let asym = asymmetry(m.as_dmatrix());
        if asym > SYMMETRY_TOL * (1.0 + m.max_abs()) {
            return Err(invalid(format!("matrix is not symmetric (max |a_ij - a_ji| = {asym:e})")));
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2` and then checks the invariant.
    pub fn from_symmetrized(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("symmetric matrix must be square".into()));
        }
        let inner = m.as_dmatrix();
        let sym = (inner + inner.transpose()) * 0.5;
        Self::new(Mat::new(sym)?)
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        Self::from_symmetrized(Mat::new(m)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Mat::zeros(n, n))
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        Self::new(Mat::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(values)))?)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        self.0.as_dmatrix()
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    /// Quadratic form `xᵀ S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let sx = self.0.mul_vec(x);
        x.iter().zip(&sx).map(|(a, b)| a * b).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self)
    }
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMat{:?}", self.0.to_rows())
    }
}

impl Serialize for SymMat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigen-decomposition, iterated until the off-diagonal
/// Frobenius norm drops below `1e-12` relative to the matrix norm.
pub fn symmetric_eigen(s: &SymMat) -> SymEigen {
    let n = s.dim();
    let mut a = s.as_dmatrix().clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= JACOBI_OFF_TOL * scale {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Rutishauser's stable rotation: t = tan(phi) with |phi| <= pi/4.
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let new_rp = arp - sn * (arq + tau * arp);
                        let new_rq = arq + sn * (arp - tau * arq);
                        a[(r, p)] = new_rp;
                        a[(p, r)] = new_rp;
                        a[(r, q)] = new_rq;
                        a[(q, r)] = new_rq;
                    }
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - sn * (vrq + tau * vrp);
                    v[(r, q)] = vrq + sn * (vrp - tau * vrq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    SymEigen { values, vectors, sweeps }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

pub fn min_eigenvalue(s: &SymMat) -> f64 {
    symmetric_eigen(s).values[0]
}

pub fn max_eigenvalue(s: &SymMat) -> f64 {
    *symmetric_eigen(s).values.last().expect("nonempty spectrum")
}

/// Sign of a definiteness requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

/// `λ_min(S) ≥ margin` for [`Sign::Positive`], `λ_max(S) ≤ -margin` for
/// [`Sign::Negative`].
pub fn is_definite(s: &SymMat, sign: Sign, margin: f64) -> Result<bool> {
    if !(margin >= 0.0) {
        return Err(invalid(format!("definiteness margin must be >= 0, got {margin}")));
    }
    Ok(match sign {
        Sign::Positive => min_eigenvalue(s) >= margin,
        Sign::Negative => max_eigenvalue(s) <= -margin,
    })
}
