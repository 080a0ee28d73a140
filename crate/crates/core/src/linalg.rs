//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! Everything here works on dynamically sized matrices; the problem sizes are
//! a handful of antennas, so allocation cost is irrelevant next to the Monte
//! Carlo loops.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Squared Frobenius norm, i.e. `tr(M Mᴴ)`.
pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    frobenius_sq(m).sqrt()
}

/// `‖UᴴU − I‖_F`.
pub fn unitary_defect(u: &CMatrix) -> f64 {
    let g = u.adjoint() * u;
    frobenius(&(g - identity(u.ncols())))
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// `U diag(d) Uᴴ` for a real diagonal `d`.
pub fn unitary_congruence(u: &CMatrix, d: &[f64]) -> CMatrix {
    let n = u.nrows();
    let mut scaled = u.clone();
    for (j, &dj) in d.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= dj;
        }
    }
    scaled * u.adjoint()
}

/// `U diag(d) Uᴴ` for a complex diagonal `d`.
pub fn unitary_congruence_c(u: &CMatrix, d: &[C64]) -> CMatrix {
    let n = u.nrows();
    let mut scaled = u.clone();
    for (j, &dj) in d.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= dj;
        }
    }
    scaled * u.adjoint()
}

/// `u_jᴴ M u_j` for every column `u_j` of `U`.
pub fn column_quadratic_forms(u: &CMatrix, m: &CMatrix) -> Vec<C64> {
    (0..u.ncols())
        .map(|j| {
            let col = u.column(j);
            (col.adjoint() * m * col)[(0, 0)]
        })
        .collect()
}

/// Closest unitary matrix in Frobenius norm, `U (UᴴU)^{-1/2}`.
pub fn polar_factor(u: &CMatrix) -> Result<CMatrix> {
    let gram = hermitian_part(&(u.adjoint() * u));
    let eig = SymmetricEigen::new(gram);
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::LinAlg("polar factor of a singular matrix".into()));
    }
    let inv_sqrt: Vec<f64> = eig.eigenvalues.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(u * unitary_congruence(&eig.eigenvectors, &inv_sqrt))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn inverse_hpd(m: &CMatrix) -> Result<CMatrix> {
    Cholesky::new(hermitian_part(m))
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::LinAlg("matrix is not positive definite".into()))
}

/// `log₂ det(M)` for a Hermitian positive definite matrix.
pub fn log2_det_hpd(m: &CMatrix) -> Result<f64> {
    let ch = Cholesky::new(hermitian_part(m))
        .ok_or_else(|| Error::LinAlg("matrix is not positive definite".into()))?;
    let l = ch.l_dirty();
    Ok(2.0 * (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * LOG2_E)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column-major vectorisation.
pub fn vec_of(m: &CMatrix) -> Vec<C64> {
    m.iter().copied().collect()
}

pub fn from_real(m: &RMatrix) -> CMatrix {
    m.map(|x| c(x, 0.0))
}

/// Matrix whose only nonzero entry is a one at `(i, j)`.
pub fn unit_matrix(rows: usize, cols: usize, i: usize, j: usize) -> CMatrix {
    let mut m = zeros(rows, cols);
    m[(i, j)] = c(1.0, 0.0);
    m
}
