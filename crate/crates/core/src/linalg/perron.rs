//! Perron value (rightmost real eigenvalue) of Metzler matrices.
//!
//! The matrix is split into strongly connected components; the Perron value
//! is the maximum over the irreducible diagonal blocks. Each block is shifted
//! to a nonnegative matrix with positive diagonal and run through power
//! iteration, with Collatz–Wielandt ratios giving a guaranteed bracket at
//! every step. If the bracket does not close within the iteration cap the
//! block falls back to bisection on the M-matrix test for `sI − B`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::LinalgError;
use crate::policy::NumericPolicy;

const MAX_POWER_ITERATIONS: usize = 20_000;
const MAX_BISECTION_STEPS: usize = 200;
/// Bracket width targeted by power iteration, relative to `‖B‖_∞`.
const RELATIVE_TOL: f64 = 1e-11;

/// Perron value together with a positive eigenvector when one is available
/// (irreducible input whose power iteration converged).
#[derive(Debug, Clone)]
pub struct Perron {
    pub value: f64,
    pub vector: Option<DVector<f64>>,
}

/// Compressed-row storage of a Metzler matrix: explicit diagonal plus the
/// off-diagonal pattern with nonnegative values.
///
/// The pattern is fixed at construction; values can be overwritten in place
/// with [`MetzlerCsr::values_mut`], which keeps the cached component
/// structure valid as long as pattern entries stay positive.
#[derive(Debug, Clone)]
pub struct MetzlerCsr {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    components: OnceLock<Vec<Vec<usize>>>,
}

impl MetzlerCsr {
    /// Builds the sparse form of a dense square matrix, rejecting
    /// off-diagonal entries below `−policy.metzler`.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        let tol = NumericPolicy::DEFAULT.metzler;
        let mut diag = Vec::with_capacity(n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)];
                if !x.is_finite() {
                    return Err(LinalgError::NonFinite);
                }
                if i == j {
                    diag.push(x);
                } else if x > 0.0 {
                    cols.push(j);
                    vals.push(x);
                } else if x < -tol {
                    return Err(LinalgError::NotMetzler { row: i, col: j, value: x });
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self::assemble(n, diag, row_ptr, cols, vals))
    }

    /// Builds from a diagonal and `(row, col, value)` off-diagonal entries.
    /// Duplicate positions are summed; positions whose sum is zero are kept
    /// out of the pattern.
    pub fn from_entries(
        diag: Vec<f64>,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, LinalgError> {
        let n = diag.len();
        if diag.iter().any(|d| !d.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, x) in entries {
            if i >= n || j >= n {
                return Err(LinalgError::Shape(format!("entry ({i},{j}) outside order {n}")));
            }
            if i == j {
                return Err(LinalgError::Shape(format!("diagonal entry ({i},{j}) passed as off-diagonal")));
            }
            rows[i].push((j, x));
        }
        let tol = NumericPolicy::DEFAULT.metzler;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut x = 0.0;
                while k < row.len() && row[k].0 == j {
                    x += row[k].1;
                    k += 1;
                }
                if !x.is_finite() {
                    return Err(LinalgError::NonFinite);
                }
                if x < -tol {
                    return Err(LinalgError::NotMetzler { row: i, col: j, value: x });
                }
                if x > 0.0 {
                    cols.push(j);
                    vals.push(x);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self::assemble(n, diag, row_ptr, cols, vals))
    }

    fn assemble(n: usize, diag: Vec<f64>, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
            components: OnceLock::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Row pointer and column index arrays of the off-diagonal pattern.
    pub fn pattern(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.cols)
    }

    /// Mutable diagonal and off-diagonal values (pattern order). Values
    /// written here must stay nonnegative off the diagonal.
    pub fn values_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.diag, &mut self.vals)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(self.diag.clone()));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[k])] += self.vals[k];
            }
        }
        m
    }

    pub fn perron_value(&self) -> Result<f64, LinalgError> {
        let mut x = vec![1.0; self.n];
        self.perron_value_from(&mut x)
    }

    /// Perron value using `x` as the starting vector of every block's power
    /// iteration; on return `x` holds the final iterates. Nonpositive
    /// entries of `x` are reset to one.
    pub fn perron_value_from(&self, x: &mut [f64]) -> Result<f64, LinalgError> {
        self.check_nonempty()?;
        if x.len() != self.n {
            return Err(LinalgError::Shape("start vector has wrong length".into()));
        }
        sanitize(x);
        let mut best = f64::NEG_INFINITY;
        self.for_each_component(x, |outcome| {
            best = best.max(outcome);
            true
        }, None)?;
        Ok(best)
    }

    /// Decides `perron_value < threshold`, stopping as soon as the
    /// Collatz–Wielandt bracket settles the question.
    pub fn perron_below(&self, threshold: f64) -> Result<bool, LinalgError> {
        self.check_nonempty()?;
        let mut x = vec![1.0; self.n];
        let mut below = true;
        self.for_each_component(
            &mut x,
            |value| {
                if value >= threshold {
                    below = false;
                }
                below
            },
            Some(threshold),
        )?;
        Ok(below)
    }

    pub fn perron(&self) -> Result<Perron, LinalgError> {
        self.check_nonempty()?;
        let mut x = vec![1.0; self.n];
        if self.components().len() == 1 && self.n > 1 {
            let out = power_bracket(self, &mut x, None)?;
            let vector = out.converged.then(|| {
                let v = DVector::from_vec(x);
                let norm = v.norm();
                v / norm
            });
            return Ok(Perron {
                value: out.value,
                vector,
            });
        }
        Ok(Perron {
            value: self.perron_value_from(&mut x)?,
            vector: None,
        })
    }

    fn check_nonempty(&self) -> Result<(), LinalgError> {
        if self.n == 0 {
            return Err(LinalgError::Shape("empty matrix has no Perron value".into()));
        }
        Ok(())
    }

    fn components(&self) -> &[Vec<usize>] {
        self.components.get_or_init(|| {
            let mut g = DiGraph::<(), ()>::with_capacity(self.n, self.cols.len());
            let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
            for i in 0..self.n {
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    g.add_edge(nodes[i], nodes[self.cols[k]], ());
                }
            }
            tarjan_scc(&g)
                .into_iter()
                .map(|c| {
                    let mut idx: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
                    idx.sort_unstable();
                    idx
                })
                .collect()
        })
    }

    /// Runs every irreducible block, passing its value (or, when a
    /// threshold decided early, a bound on the correct side of it) to
    /// `visit`; stops when `visit` returns false.
    fn for_each_component(
        &self,
        x: &mut [f64],
        mut visit: impl FnMut(f64) -> bool,
        threshold: Option<f64>,
    ) -> Result<(), LinalgError> {
        let components = self.components();
        if components.len() == 1 && self.n > 1 {
            let out = power_bracket(self, x, threshold)?;
            visit(out.value);
            return Ok(());
        }
        for comp in components {
            let value = if comp.len() == 1 {
                self.diag[comp[0]]
            } else {
                let sub = self.restrict(comp);
                let mut xs: Vec<f64> = comp.iter().map(|&g| x[g]).collect();
                let out = power_bracket(&sub, &mut xs, threshold)?;
                for (l, &g) in comp.iter().enumerate() {
                    x[g] = xs[l];
                }
                out.value
            };
            if !visit(value) {
                break;
            }
        }
        Ok(())
    }

    fn restrict(&self, comp: &[usize]) -> MetzlerCsr {
        let mut local = vec![usize::MAX; self.n];
        for (l, &g) in comp.iter().enumerate() {
            local[g] = l;
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(comp.len());
        for &i in comp {
            diag.push(self.diag[i]);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = local[self.cols[k]];
                if j != usize::MAX {
                    cols.push(j);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(cols.len());
        }
        let sub = Self::assemble(comp.len(), diag, row_ptr, cols, vals);
        let _ = sub.components.set(vec![(0..comp.len()).collect()]);
        sub
    }

    /// `y = B·x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.diag[i].abs() + self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn sanitize(x: &mut [f64]) {
    if x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        x.iter_mut().for_each(|v| *v = 1.0);
    }
}

struct PowerOutcome {
    /// Perron value, or with a threshold a bound deciding the comparison.
    value: f64,
    converged: bool,
}

/// Power iteration on an irreducible Metzler block with a Collatz–Wielandt
/// stopping rule; `x` is the positive start vector and receives the final
/// iterate.
fn power_bracket(b: &MetzlerCsr, x: &mut [f64], threshold: Option<f64>) -> Result<PowerOutcome, LinalgError> {
    let n = b.n;
    sanitize(x);
    let norm = b.inf_norm();
    let tol = RELATIVE_TOL * norm.max(f64::MIN_POSITIVE);

    let min_diag = b.diag.iter().copied().fold(f64::INFINITY, f64::min);
    let max_off_row = (0..n)
        .map(|i| b.vals[b.row_ptr[i]..b.row_ptr[i + 1]].iter().sum::<f64>())
        .fold(0.0, f64::max);
    // A positive diagonal after the shift rules out periodic blocks.
    let shift = -min_diag + 0.5 * max_off_row.max(norm * 1e-3);

    let mut y = vec![0.0; n];
    let mut bracket = None;
    for _ in 0..MAX_POWER_ITERATIONS {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut ymax: f64 = 0.0;
        for i in 0..n {
            let mut acc = (b.diag[i] + shift) * x[i];
            for k in b.row_ptr[i]..b.row_ptr[i + 1] {
                acc += b.vals[k] * x[b.cols[k]];
            }
            y[i] = acc;
            let ratio = acc / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            ymax = ymax.max(acc);
        }
        if !(ymax > 0.0 && ymax.is_finite()) || y.iter().any(|&v| !(v > 0.0)) {
            break;
        }
        let (lo, hi) = (lo - shift, hi - shift);
        bracket = Some((lo, hi));
        if let Some(t) = threshold {
            if hi < t {
                return Ok(PowerOutcome { value: hi, converged: false });
            }
            if lo >= t {
                return Ok(PowerOutcome { value: lo, converged: false });
            }
        }
        if hi - lo <= tol {
            return Ok(PowerOutcome {
                value: 0.5 * (lo + hi),
                converged: true,
            });
        }
        for i in 0..n {
            x[i] = y[i] / ymax;
        }
    }

    let dense = b.to_dense();
    if let Some(t) = threshold {
        let below = is_nonsingular_m_matrix(&dense, t);
        return Ok(PowerOutcome {
            value: if below { f64::NEG_INFINITY } else { t },
            converged: false,
        });
    }
    let (mut lo, mut hi) = match bracket {
        Some((lo, hi)) if lo <= hi => (lo, hi),
        _ => (-norm, norm),
    };
    for _ in 0..MAX_BISECTION_STEPS {
        if hi - lo <= tol {
            return Ok(PowerOutcome {
                value: 0.5 * (lo + hi),
                converged: false,
            });
        }
        let mid = 0.5 * (lo + hi);
        if is_nonsingular_m_matrix(&dense, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(LinalgError::NoConvergence {
        routine: "Perron bisection",
        iterations: MAX_BISECTION_STEPS,
    })
}

/// `sI − B` (a Z-matrix) is a nonsingular M-matrix iff Gaussian elimination
/// without pivoting produces only positive pivots.
fn is_nonsingular_m_matrix(b: &DMatrix<f64>, s: f64) -> bool {
    let n = b.nrows();
    let mut a = DMatrix::from_fn(n, n, |i, j| if i == j { s - b[(i, j)] } else { -b[(i, j)] });
    for k in 0..n {
        let pivot = a[(k, k)];
        if !(pivot > 0.0) {
            return false;
        }
        for i in (k + 1)..n {
            let factor = a[(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                let akj = a[(k, j)];
                a[(i, j)] -= factor * akj;
            }
        }
    }
    true
}

/// Rightmost eigenvalue of a Metzler matrix.
pub fn perron_value(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    MetzlerCsr::from_dense(m)?.perron_value()
}

/// Rightmost eigenvalue of a Metzler matrix with its eigenvector when the
/// matrix is irreducible.
pub fn perron(m: &DMatrix<f64>) -> Result<Perron, LinalgError> {
    MetzlerCsr::from_dense(m)?.perron()
}
