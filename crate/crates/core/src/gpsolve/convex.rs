//! Log-domain form: with `y = log x` a posynomial becomes a log-sum-exp of
//! affine functions and a monomial becomes affine.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{gp_validate, GeometricProgram, GpError, Monomial, Posynomial};

/// `log Σ_k exp(b_k + a_k·y)` with sparse rows `a_k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogSumExp {
    pub terms: Vec<(f64, Vec<(usize, f64)>)>,
}

impl LogSumExp {
    pub fn value(&self, y: &[f64]) -> f64 {
        let exps: Vec<f64> = self.terms.iter().map(|(b, a)| affine(*b, a, y)).collect();
        log_sum_exp(&exps)
    }

    /// Single affine term: `b + a·y`.
    pub fn is_affine(&self) -> bool {
        self.terms.len() == 1
    }

    /// Adds `scale·∇f` to `grad` and `scale·∇²f` to `hess`, returns `f` and
    /// the sparse gradient.
    pub(crate) fn derivs(&self, y: &[f64], dense_grad: &mut [f64], sparse_grad: &mut Vec<(usize, f64)>) -> (f64, Vec<f64>) {
        let exps: Vec<f64> = self.terms.iter().map(|(b, a)| affine(*b, a, y)).collect();
        let value = log_sum_exp(&exps);
        let pi: Vec<f64> = exps.iter().map(|e| (e - value).exp()).collect();
        sparse_grad.clear();
        for ((_, a), w) in self.terms.iter().zip(&pi) {
            for &(j, x) in a {
                dense_grad[j] += w * x;
            }
        }
        for (_, a) in &self.terms {
            for &(j, _) in a {
                if dense_grad[j] != 0.0 {
                    sparse_grad.push((j, dense_grad[j]));
                    dense_grad[j] = 0.0;
                }
            }
        }
        (value, pi)
    }

    /// Adds `c·Σ_k π_k a_k a_kᵀ` to `hess`.
    pub(crate) fn add_curvature(&self, pi: &[f64], c: f64, hess: &mut DMatrix<f64>) {
        if self.is_affine() {
            return;
        }
        for ((_, a), w) in self.terms.iter().zip(pi) {
            let cw = c * w;
            for &(j, x) in a {
                for &(k, z) in a {
                    hess[(j, k)] += cw * x * z;
                }
            }
        }
    }

    fn from_posynomial(p: &Posynomial, index: &BTreeMap<&str, usize>) -> Self {
        Self {
            terms: p.terms.iter().map(|t| monomial_row(t, index)).collect(),
        }
    }
}

fn affine(b: f64, a: &[(usize, f64)], y: &[f64]) -> f64 {
    b + a.iter().map(|&(j, x)| x * y[j]).sum::<f64>()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn monomial_row(t: &Monomial, index: &BTreeMap<&str, usize>) -> (f64, Vec<(usize, f64)>) {
    let mut a: Vec<(usize, f64)> = t.exponents.iter().map(|(k, e)| (index[k.as_str()], *e)).collect();
    a.sort_by_key(|x| x.0);
    (t.coeff.ln(), a)
}

/// Convex program over `y = log x`: minimise `objective(y)` subject to
/// `ineqs[k](y) ≤ 0` and `b + a·y = 0` for every `(b, a)` in `eqs`.
/// Box bounds appear as single-term inequalities after the program's own.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexForm {
    pub names: Vec<String>,
    pub objective: LogSumExp,
    pub ineqs: Vec<LogSumExp>,
    /// Number of entries of `ineqs` that come from the program (the rest
    /// are bounds).
    pub program_ineqs: usize,
    pub eqs: Vec<(f64, Vec<(usize, f64)>)>,
}

impl ConvexForm {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Dense equality system `A y = −b`.
    pub(crate) fn eq_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.eqs.len(), self.dim());
        let mut b = DVector::zeros(self.eqs.len());
        for (r, (br, row)) in self.eqs.iter().enumerate() {
            b[r] = *br;
            for &(j, x) in row {
                a[(r, j)] += x;
            }
        }
        (a, b)
    }
}

pub fn gp_to_convex(program: &GeometricProgram) -> Result<ConvexForm, GpError> {
    let violations = gp_validate(program);
    if !violations.is_empty() {
        return Err(GpError::Malformed(violations.iter().map(|v| v.to_string()).collect()));
    }
    let index: BTreeMap<&str, usize> = program.variables.iter().enumerate().map(|(k, v)| (v.name.as_str(), k)).collect();
    let mut ineqs: Vec<LogSumExp> = program.ineqs.iter().map(|f| LogSumExp::from_posynomial(f, &index)).collect();
    let program_ineqs = ineqs.len();
    for (k, v) in program.variables.iter().enumerate() {
        if let Some(hi) = v.hi {
            ineqs.push(LogSumExp {
                terms: vec![(-hi.ln(), vec![(k, 1.0)])],
            });
        }
        if let Some(lo) = v.lo {
            ineqs.push(LogSumExp {
                terms: vec![(lo.ln(), vec![(k, -1.0)])],
            });
        }
    }
    Ok(ConvexForm {
        names: program.variables.iter().map(|v| v.name.clone()).collect(),
        objective: LogSumExp::from_posynomial(&program.objective, &index),
        ineqs,
        program_ineqs,
        eqs: program.eqs.iter().map(|g| monomial_row(&g.terms[0], &index)).collect(),
    })
}
