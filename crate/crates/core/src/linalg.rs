//! Dense complex matrix kernel.
//!
//! Every operator in this crate (Hamiltonians, propagators, projectors) is a
//! small dense square matrix, at most a few levels wide. [`ComplexMatrix`]
//! wraps an `nalgebra` matrix and adds the handful of operations the
//! propagation and gradient code needs: Hermitian eigendecomposition,
//! exponentiation of Hermitian generators, and projected trace overlaps.
//!
//! Units follow the rest of the crate: ħ = 1, generators in rad/ns, times in
//! ns.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Absolute tolerance on `max |A - A†|` for a matrix to count as Hermitian.
/// Scaled by `max(1, max|A|)` so that large generators are not rejected for
/// rounding alone.
pub const HERMITIAN_TOL: f64 = 1e-12;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Square dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        ComplexMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        ComplexMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        ComplexMatrix(DMatrix::from_fn(dim, dim, |i, j| f(i, j)))
    }

    /// Builds a matrix from row-major rows. Rows must all have the same
    /// length as the number of rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    /// Real-valued convenience constructor.
    pub fn from_real(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim), "matrix must be square");
        Self::from_fn(dim, |i, j| c(rows[i][j], 0.0))
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                what: "square matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(ComplexMatrix(m))
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn adjoint(&self) -> Self {
        ComplexMatrix(self.0.adjoint())
    }

    pub fn scale(&self, factor: C64) -> Self {
        ComplexMatrix(&self.0 * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(c(factor, 0.0))
    }

    /// `self += factor * other`, in place.
    pub fn add_scaled(&mut self, factor: C64, other: &ComplexMatrix) {
        self.0.zip_apply(&other.0, |a, b| *a += factor * b);
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &ComplexMatrix) -> C64 {
        let n = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    pub fn kron(&self, other: &ComplexMatrix) -> Self {
        ComplexMatrix(self.0.kronecker(&other.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `max |A - A†|`, entrywise.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_residual() <= HERMITIAN_TOL * self.max_abs().max(1.0)
    }

    /// `max |U†U - I|`, entrywise.
    pub fn unitarity_residual(&self) -> f64 {
        (self.adjoint() * self).max_abs_diff(&Self::identity(self.dim()))
    }

    pub fn commutator(&self, other: &ComplexMatrix) -> Self {
        &(self * other) - &(other * self)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim(), self.dim())?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let z = self.0[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.0[idx]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Mul<&ComplexMatrix> for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 * &rhs.0)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

/// Spectral decomposition `A = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors, in eigenvalue order.
    pub eigenvectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `exp(-i A dt)` from the cached spectrum.
    pub fn exp(&self, dt: f64) -> ComplexMatrix {
        let phases: Vec<C64> = self
            .eigenvalues
            .iter()
            .map(|&l| C64::from_polar(1.0, -l * dt))
            .collect();
        self.rebuild(&phases)
    }

    /// `V diag(values) V†`.
    pub fn rebuild(&self, values: &[C64]) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        let n = self.dim();
        let mut scaled = v.clone();
        for (j, &d) in values.iter().enumerate().take(n) {
            for i in 0..n {
                scaled[(i, j)] *= d;
            }
        }
        ComplexMatrix(scaled * v.adjoint())
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        let values: Vec<C64> = self.eigenvalues.iter().map(|&l| c(l, 0.0)).collect();
        self.rebuild(&values)
    }

    /// `V† X V`: an operator expressed in the eigenbasis.
    pub fn to_eigenbasis(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        ComplexMatrix(v.adjoint() * &x.0 * v)
    }

    /// `V X V†`: back from the eigenbasis.
    pub fn from_eigenbasis(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let v = &self.eigenvectors.0;
        ComplexMatrix(v * &x.0 * v.adjoint())
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eig_hermitian(a: &ComplexMatrix) -> Result<EigenDecomposition> {
    let asymmetry = a.hermiticity_residual();
    if asymmetry > HERMITIAN_TOL * a.max_abs().max(1.0) {
        return Err(Error::NotHermitian { asymmetry });
    }
    let n = a.dim();
    let eig = SymmetricEigen::new(a.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: ComplexMatrix(eigenvectors),
    })
}

/// `exp(-i A dt)` for Hermitian `A`, via its spectrum.
pub fn expm_hermitian_generator(a: &ComplexMatrix, dt: f64) -> Result<ComplexMatrix> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", format!("time step must be positive, got {dt}")));
    }
    Ok(eig_hermitian(a)?.exp(dt))
}

/// `Tr(A† B P)`.
pub fn frobenius_overlap(a: &ComplexMatrix, b: &ComplexMatrix, p: &ComplexMatrix) -> Result<C64> {
    for m in [b, p] {
        if m.dim() != a.dim() {
            return Err(Error::DimensionMismatch {
                what: "overlap operand",
                expected: a.dim(),
                found: m.dim(),
            });
        }
    }
    Ok(a.adjoint().trace_product(&(b * p)))
}

/// Pauli matrices and single-qubit ladder operators in the `|0⟩, |1⟩` basis.
pub mod pauli {
    use super::{c, ComplexMatrix};

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 1) => c(0.0, -1.0),
            (1, 0) => c(0.0, 1.0),
            _ => c(0.0, 0.0),
        })
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    /// `|1⟩⟨0|`
    pub fn raising() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[0.0, 0.0], &[1.0, 0.0]])
    }

    /// `|0⟩⟨1|`
    pub fn lowering() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }
}
