//! Top eigenpair of a symmetric operator by restarted Lanczos with full
//! reorthogonalisation.

use nalgebra::DMatrix;

use super::LinalgError;

const STEPS: usize = 40;
const RESTARTS: usize = 60;
const CHECK_EVERY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopEigen {
    /// Ritz value; never above the top eigenvalue.
    pub value: f64,
    /// Residual norm `‖Sy − θy‖` of the unit Ritz vector.
    pub residual: f64,
}

impl TopEigen {
    /// `value + residual`, an upper bound on the top eigenvalue once the
    /// Ritz pair has locked onto it.
    pub fn upper(&self) -> f64 {
        self.value + self.residual
    }
}

/// Largest eigenvalue of the symmetric operator `apply` (writing `S·x` into
/// its second argument). `start` seeds the iteration and receives the final
/// Ritz vector. Stops once the residual is at most `tol`.
pub fn sym_top_eigen(
    n: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    start: &mut [f64],
    tol: f64,
) -> Result<TopEigen, LinalgError> {
    if n == 0 || start.len() != n {
        return Err(LinalgError::Shape("Lanczos start vector has wrong length".into()));
    }
    let mut x = start.to_vec();
    if !normalize(&mut x) {
        x.iter_mut().for_each(|v| *v = 1.0);
        normalize(&mut x);
    }
    let kmax = STEPS.min(n);
    let mut w = vec![0.0; n];
    for _ in 0..RESTARTS {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::with_capacity(kmax);
        let mut beta: Vec<f64> = Vec::with_capacity(kmax);
        for j in 0..kmax {
            apply(&basis[j], &mut w);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(LinalgError::NonFinite);
            }
            alpha.push(dot(&basis[j], &w));
            // Second Gram–Schmidt pass only after heavy cancellation.
            let mut b = dot(&w, &w).sqrt();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
                let before = b;
                b = dot(&w, &w).sqrt();
                if b > std::f64::consts::FRAC_1_SQRT_2 * before {
                    break;
                }
            }
            let last = j + 1 == kmax;
            let exhausted = b <= f64::EPSILON * tol.max(f64::MIN_POSITIVE) || basis.len() == n;
            if exhausted || last || (j + 1) % CHECK_EVERY == 0 {
                let (theta, s) = ritz_top(&alpha, &beta);
                let residual = if exhausted { 0.0 } else { b * s[j].abs() };
                if residual <= tol || exhausted || last {
                    let mut y = vec![0.0; n];
                    for (q, sk) in basis.iter().zip(&s) {
                        y.iter_mut().zip(q).for_each(|(yi, qi)| *yi += sk * qi);
                    }
                    if y.iter().sum::<f64>() < 0.0 {
                        y.iter_mut().for_each(|v| *v = -*v);
                    }
                    normalize(&mut y);
                    if residual <= tol || exhausted {
                        start.copy_from_slice(&y);
                        return Ok(TopEigen { value: theta, residual });
                    }
                    x = y;
                    break;
                }
            }
            beta.push(b);
            basis.push(w.iter().map(|v| v / b).collect());
        }
    }
    Err(LinalgError::NoConvergence {
        routine: "Lanczos",
        iterations: RESTARTS * kmax,
    })
}

/// Top eigenpair of the tridiagonal matrix with diagonal `alpha` and
/// off-diagonal `beta`.
fn ritz_top(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    (eig.eigenvalues[top], eig.eigenvectors.column(top).iter().copied().collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) -> bool {
    let norm = dot(x, x).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    true
}
