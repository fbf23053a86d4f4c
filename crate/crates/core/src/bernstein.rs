//! Matrix Bernstein tail function and the equivalent forms of the
//! deviation condition used by the certificates.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::linalg::{sym_eig_min, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BernsteinError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Parameters of the tail function `κ_{Δ,σ²}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    pub delta: f64,
    pub sigma2: f64,
    pub dim: usize,
}

impl TailParams {
    pub fn new(delta: f64, sigma2: f64, dim: usize) -> Result<Self, BernsteinError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(BernsteinError::Domain(format!("delta must be finite and nonnegative, got {delta}")));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(BernsteinError::Domain(format!("sigma2 must be finite and nonnegative, got {sigma2}")));
        }
        if dim == 0 {
            return Err(BernsteinError::Domain("dim must be at least 1".into()));
        }
        Ok(Self { delta, sigma2, dim })
    }
}

/// `κ_{Δ,σ²}(a) = dim · exp(−a² / (2σ² + 2Δa/3))`.
///
/// With `Δ = σ² = 0` and `a > 0` the limit value 0 is returned.
pub fn kappa(tp: &TailParams, a: f64) -> Result<f64, BernsteinError> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(BernsteinError::Domain(format!("a must be finite and nonnegative, got {a}")));
    }
    let dim = tp.dim as f64;
    if a == 0.0 {
        return Ok(dim);
    }
    let denom = 2.0 * tp.sigma2 + 2.0 * tp.delta * a / 3.0;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(dim * (-(a * a) / denom).exp())
}

/// `ρ = log(nN/ε)`.
pub fn rho_of_eps(eps: f64, n: usize, big_n: usize) -> Result<f64, BernsteinError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(BernsteinError::Domain(format!("eps must lie in (0, 1], got {eps}")));
    }
    if n == 0 || big_n == 0 {
        return Err(BernsteinError::Domain("n and N must be positive".into()));
    }
    Ok(((n * big_n) as f64).ln() - eps.ln())
}

/// Inverse of [`rho_of_eps`]: `ε = nN·e^{−ρ}`.
pub fn eps_of_rho(rho: f64, n: usize, big_n: usize) -> f64 {
    ((n * big_n) as f64) * (-rho).exp()
}

/// `2ρΔ/a + 6ρσ²/a²`.
pub fn lemma1_lhs(delta: f64, sigma: f64, a: f64, rho: f64) -> f64 {
    2.0 * rho * delta / a + 6.0 * rho * sigma * sigma / (a * a)
}

fn check_domain(delta: f64, sigma: f64, a: f64, rho: f64) -> Result<(), BernsteinError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(BernsteinError::Domain(format!("a must be positive, got {a}")));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(BernsteinError::Domain(format!("rho must be nonnegative, got {rho}")));
    }
    if !(delta >= 0.0 && sigma >= 0.0) || !delta.is_finite() || !sigma.is_finite() {
        return Err(BernsteinError::Domain(format!(
            "delta and sigma must be finite and nonnegative, got ({delta}, {sigma})"
        )));
    }
    Ok(())
}

/// `2ρΔ/a + 6ρσ²/a² < 3`, strict.
pub fn lemma1_scalar(delta: f64, sigma: f64, a: f64, rho: f64) -> Result<bool, BernsteinError> {
    check_domain(delta, sigma, a, rho)?;
    Ok(lemma1_lhs(delta, sigma, a, rho) < 3.0)
}

/// The 3×3 matrix of the deviation LMI.
pub fn lemma1_matrix(delta: f64, sigma: f64, a: f64, rho: f64) -> Matrix3<f64> {
    let d = a - rho * delta / 3.0;
    let s = (2.0 * rho).sqrt() * sigma;
    let t = rho * delta / 3.0;
    Matrix3::new(d, s, t, s, d, 0.0, t, 0.0, d)
}

/// Positive definiteness of [`lemma1_matrix`], decided by its smallest
/// eigenvalue.
pub fn lemma1_lmi(delta: f64, sigma: f64, a: f64, rho: f64) -> Result<bool, BernsteinError> {
    check_domain(delta, sigma, a, rho)?;
    let m = lemma1_matrix(delta, sigma, a, rho);
    let dense = nalgebra::DMatrix::from_fn(3, 3, |i, j| m[(i, j)]);
    let lmin = sym_eig_min(&SymMatrix::new(dense).map_err(|e| BernsteinError::Domain(e.to_string()))?)
        .map_err(|e| BernsteinError::Domain(e.to_string()))?;
    Ok(lmin > 0.0)
}
