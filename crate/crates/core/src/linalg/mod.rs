//! Dense numerical kernels: symmetric eigensolve, spectral norm, PSD square
//! roots and Perron values of Metzler matrices.

mod lanczos;
mod perron;
mod symeig;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::policy::NumericPolicy;

pub use lanczos::{sym_top_eigen, TopEigen};
pub use perron::{perron, perron_value, MetzlerCsr, Perron};
pub use symeig::SymEigen;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not Metzler: entry ({row},{col}) = {value:e}")]
    NotMetzler { row: usize, col: usize, value: f64 },
    #[error("matrix is indefinite: eigenvalue {eigenvalue:e} below tolerance")]
    Indefinite { eigenvalue: f64 },
    #[error("{routine} did not converge within {iterations} iterations")]
    NoConvergence { routine: &'static str, iterations: usize },
    #[error("shape error: {0}")]
    Shape(String),
}

/// A real symmetric matrix. Construction checks symmetry and averages the
/// two triangles so downstream code sees an exactly symmetric array.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let scale = m.amax().max(1.0);
        let asymmetry = (&m - m.transpose()).amax();
        if asymmetry > NumericPolicy::DEFAULT.symmetry * scale {
            return Err(LinalgError::NotSymmetric { asymmetry });
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its transpose without checking.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Full eigen-decomposition (ascending eigenvalues, orthonormal vectors).
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen, LinalgError> {
    symeig::decompose(&m.0, true)
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(m: &SymMatrix) -> Result<DVector<f64>, LinalgError> {
    symeig::decompose(&m.0, false).map(|e| e.values)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_eig_max(m: &SymMatrix) -> Result<f64, LinalgError> {
    if m.order() == 0 {
        return Err(LinalgError::Shape("empty matrix has no eigenvalues".into()));
    }
    let values = sym_eigenvalues(m)?;
    Ok(values[values.len() - 1])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_eig_min(m: &SymMatrix) -> Result<f64, LinalgError> {
    if m.order() == 0 {
        return Err(LinalgError::Shape("empty matrix has no eigenvalues".into()));
    }
    Ok(sym_eigenvalues(m)?[0])
}

/// Largest singular value, `√λ_max(MᵀM)`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if m.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    // Gram matrix on the smaller side.
    let gram = if m.nrows() < m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let top = sym_eig_max(&SymMatrix::symmetrized(gram))?;
    Ok(top.max(0.0).sqrt())
}

/// Factor `F` with `F·Fᵀ = M` and at most `rank(M)` columns.
pub fn psd_sqrt(m: &SymMatrix) -> Result<DMatrix<f64>, LinalgError> {
    let n = m.order();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let policy = NumericPolicy::DEFAULT;
    let eig = sym_eigen(m)?;
    let top = eig.values[n - 1].max(0.0);
    let scale = eig.values.amax();
    let lowest = eig.values[0];
    if lowest < -policy.psd * scale.max(f64::MIN_POSITIVE) && lowest < 0.0 {
        return Err(LinalgError::Indefinite { eigenvalue: lowest });
    }
    let vectors = eig.vectors.expect("vectors requested");
    let threshold = policy.rank * top;
    let kept: Vec<usize> = (0..n).filter(|&k| eig.values[k] > threshold && eig.values[k] > 0.0).collect();
    let mut f = DMatrix::zeros(n, kept.len());
    for (c, &k) in kept.iter().enumerate() {
        let s = eig.values[k].sqrt();
        for i in 0..n {
            f[(i, c)] = vectors[(i, k)] * s;
        }
    }
    Ok(f)
}

/// Numerical rank of a PSD matrix at the policy threshold.
pub fn psd_rank(m: &SymMatrix) -> Result<usize, LinalgError> {
    let values = sym_eigenvalues(m)?;
    let top = values.iter().copied().fold(0.0, f64::max);
    let threshold = NumericPolicy::DEFAULT.rank.max(1e-10) * top;
    Ok(values.iter().filter(|&&v| v > threshold && v > 0.0).count())
}

/// True when every off-diagonal entry is at least `−policy.metzler`.
pub fn is_metzler(m: &DMatrix<f64>) -> bool {
    let tol = NumericPolicy::DEFAULT.metzler;
    m.nrows() == m.ncols()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] >= -tol))
}
