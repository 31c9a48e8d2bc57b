//! Dense Hermitian kernels shared by the state, tomography and learning code.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as c64;

use crate::error::{HltError, Result};

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<c64>,
}

pub fn eigh(m: MatRef<'_, c64>) -> Result<HermitianEigen> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| HltError::LinearAlgebra(format!("Hermitian eigendecomposition failed: {e:?}")))?;
    let values = evd.S().column_vector().iter().map(|z| z.re).collect();
    Ok(HermitianEigen { values, vectors: evd.U().to_owned() })
}

pub fn eigvalsh(m: MatRef<'_, c64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| HltError::LinearAlgebra(format!("Hermitian eigenvalues failed: {e:?}")))
}

impl HermitianEigen {
    /// `V diag(w) V^dagger` for real weights `w`, Hermitian by construction.
    pub fn recompose(&self, weights: &[f64]) -> Mat<c64> {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (j, &w) in weights.iter().enumerate() {
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        let mut out = &scaled * self.vectors.adjoint();
        hermitize_in_place(&mut out);
        out
    }

    /// `W W^dagger` with `W = V diag(sqrt(w))`; requires `w >= 0`.
    pub fn recompose_psd(&self, weights: &[f64]) -> Mat<c64> {
        let n = self.vectors.nrows();
        let mut factor = self.vectors.clone();
        for (j, &w) in weights.iter().enumerate() {
            let s = w.max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        let mut out = &factor * factor.adjoint();
        hermitize_in_place(&mut out);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat<c64> {
        let w: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        self.recompose(&w)
    }
}

pub fn hermitize_in_place(m: &mut Mat<c64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in 0..i {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: MatRef<'_, c64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

pub fn frobenius_sq(m: MatRef<'_, c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s
}

/// Singular values (descending) of a complex matrix.
pub fn singular_values(m: MatRef<'_, c64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| HltError::LinearAlgebra(format!("singular values failed: {e:?}")))
}
