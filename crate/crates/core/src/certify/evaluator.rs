//! Precomputed moment data for fast evaluation of `a_max(p)`, `Δ(p)` and
//! `σ(p)` at many scalings `p`.

use nalgebra::DMatrix;

use super::CertifyError;
use crate::linalg::{sym_eig_max, sym_top_eigen, MetzlerCsr, SymMatrix, TopEigen};
use crate::model::{Mode, NetworkModel, RowVariance, Side};
use crate::policy::NumericPolicy;

/// Lanczos residual target relative to the row-sum norm of the mean form.
const LANCZOS_TOL: f64 = 1e-13;
const LANCZOS_SEARCH_TOL: f64 = 1e-6;
/// Back-off of a witness `a` below `a_max`, relative to `‖S‖∞`, so that the
/// threshold test in the certificate check is decided well above rounding.
const WITNESS_GUARD: f64 = 1e-12;

/// Per-subsystem variance data of the independent-block certificate.
#[derive(Debug, Clone)]
struct A1Row {
    /// `Σ_{j≠i} W(A_ijᵀ) + E[(D_ii + D_iiᵀ)²]`.
    own: DMatrix<f64>,
    /// `(j, W(A_ji))` for `j ≠ i`.
    incoming: Vec<(usize, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
enum Variance {
    A1(Vec<A1Row>),
    A2(Vec<RowVariance>),
}

/// Coefficients of one off-diagonal entry `(k, l)` of
/// `S = E[A]ᵀP + P E[A] + λP`: `p[bk]·ekl + p[bl]·elk`.
#[derive(Debug, Clone, Copy)]
struct SEntry {
    bk: usize,
    ekl: f64,
    bl: usize,
    elk: f64,
}

#[derive(Debug, Clone)]
enum MeanForm {
    /// Mean is Metzler: `S` is a symmetric Metzler matrix with a fixed
    /// pattern.
    Metzler {
        csr: MetzlerCsr,
        entries: Vec<SEntry>,
        diag: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

/// Mutable per-thread state (sparse values and the last Perron iterate).
#[derive(Debug, Clone)]
pub struct Workspace {
    csr: Option<MetzlerCsr>,
    x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluator {
    n: usize,
    big_n: usize,
    mode: Mode,
    mean: MeanForm,
    /// Per-subsystem deviation constant: `Δ(p) = max_i p_i·dev[i]`.
    dev: Vec<f64>,
    variance: Variance,
    in_degree: Vec<usize>,
}

impl Evaluator {
    /// `mode` selects the certificate; an A1 model can be evaluated under
    /// either, an A2 model only under A2.
    pub fn new(model: &NetworkModel, mode: Mode) -> Result<Self, CertifyError> {
        if model.mode() == Mode::A2 && mode == Mode::A1 {
            return Err(CertifyError::ModeMismatch(
                "the independent-block certificate needs a model with independent blocks".into(),
            ));
        }
        let violations = model.positivity_violations();
        if let Some(v) = violations.first() {
            return Err(CertifyError::NotPositive(format!(
                "{v} ({} violating entries in total)",
                violations.len()
            )));
        }
        let n = model.state_dim();
        let big_n = model.subsystems();
        let mean = mean_form(&model.mean_matrix(), n);
        let in_degree = model.neighborhoods().in_degree;

        let (dev, variance) = match mode {
            Mode::A1 => a1_data(model)?,
            Mode::A2 => a2_data(model)?,
        };
        Ok(Self {
            n,
            big_n,
            mode,
            mean,
            dev,
            variance,
            in_degree,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn subsystems(&self) -> usize {
        self.big_n
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn in_degree(&self) -> &[usize] {
        &self.in_degree
    }

    /// Scale used to compare `a` values across models.
    pub fn mean_scale(&self) -> f64 {
        match &self.mean {
            MeanForm::Metzler { entries, diag, .. } => entries
                .iter()
                .map(|e| e.ekl.abs().max(e.elk.abs()))
                .chain(diag.iter().map(|d| d.abs()))
                .fold(0.0, f64::max),
            MeanForm::Dense(m) => m.amax(),
        }
        .max(f64::MIN_POSITIVE)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            csr: match &self.mean {
                MeanForm::Metzler { csr, .. } => Some(csr.clone()),
                MeanForm::Dense(_) => None,
            },
            x: vec![1.0; self.n * self.big_n],
        }
    }

    /// `−λ_max(E[A]ᵀP + P E[A] + λP)`.
    pub fn a_max(&self, p: &[f64], lambda: f64, ws: &mut Workspace) -> Result<f64, CertifyError> {
        match &self.mean {
            MeanForm::Metzler { .. } => {
                // The mean form is symmetric; the Ritz bound keeps `a` on the safe side.
                match self.lanczos(p, lambda, ws, LANCZOS_TOL) {
                    Some(top) => Ok(-top.upper()),
                    None => self.dense_fallback(ws),
                }
            }
            MeanForm::Dense(_) => Ok(-sym_eig_max(&self.dense_mean(p, lambda))?),
        }
    }

    /// `a_max − 1e−12·‖S‖∞`, the decay margin put into search witnesses.
    pub fn a_witness(&self, p: &[f64], lambda: f64, ws: &mut Workspace) -> Result<f64, CertifyError> {
        let a = self.a_max(p, lambda, ws)?;
        let norm = match &self.mean {
            MeanForm::Metzler { .. } => ws.csr.as_ref().expect("workspace matches evaluator").inf_norm(),
            MeanForm::Dense(_) => self.dense_mean(p, lambda).as_matrix().row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max),
        };
        Ok(a - WITNESS_GUARD * norm)
    }

    /// `a_max` to search accuracy: the Ritz value at a looser residual,
    /// whose error is quadratic in the residual.
    pub fn a_max_approx(&self, p: &[f64], lambda: f64, ws: &mut Workspace) -> Result<f64, CertifyError> {
        match &self.mean {
            MeanForm::Metzler { .. } => match self.lanczos(p, lambda, ws, LANCZOS_SEARCH_TOL) {
                Some(top) => Ok(-top.value),
                None => self.dense_fallback(ws),
            },
            MeanForm::Dense(_) => self.a_max(p, lambda, ws),
        }
    }

    fn lanczos(&self, p: &[f64], lambda: f64, ws: &mut Workspace, rel_tol: f64) -> Option<TopEigen> {
        self.fill_mean(p, lambda, ws);
        let csr = ws.csr.as_ref().expect("workspace matches evaluator");
        let tol = rel_tol * csr.inf_norm().max(f64::MIN_POSITIVE);
        let top = sym_top_eigen(csr.order(), |x, y| csr.mul_vec(x, y), &mut ws.x, tol);
        if top.is_err() {
            ws.x.iter_mut().for_each(|v| *v = 1.0);
        }
        top.ok()
    }

    fn dense_fallback(&self, ws: &Workspace) -> Result<f64, CertifyError> {
        let csr = ws.csr.as_ref().expect("workspace matches evaluator");
        Ok(-sym_eig_max(&SymMatrix::symmetrized(csr.to_dense()))?)
    }

    /// Decides `a < a_max` without resolving `a_max`; the sparse branch falls
    /// back to an exact M-matrix test when the power bracket is inconclusive.
    pub fn a_below_max(&self, p: &[f64], lambda: f64, a: f64, ws: &mut Workspace) -> Result<bool, CertifyError> {
        match &self.mean {
            MeanForm::Metzler { .. } => {
                self.fill_mean(p, lambda, ws);
                let csr = ws.csr.as_ref().expect("workspace matches evaluator");
                Ok(csr.perron_below(-a)?)
            }
            MeanForm::Dense(_) => Ok(-sym_eig_max(&self.dense_mean(p, lambda))? > a),
        }
    }

    fn fill_mean(&self, p: &[f64], lambda: f64, ws: &mut Workspace) {
        let n = self.n;
        let MeanForm::Metzler { entries, diag, .. } = &self.mean else {
            return;
        };
        let csr = ws.csr.as_mut().expect("workspace matches evaluator");
        let (d, vals) = csr.values_mut();
        for (k, dk) in d.iter_mut().enumerate() {
            let pk = p[k / n];
            *dk = 2.0 * pk * diag[k] + lambda * pk;
        }
        for (v, e) in vals.iter_mut().zip(entries) {
            *v = p[e.bk] * e.ekl + p[e.bl] * e.elk;
        }
    }

    fn dense_mean(&self, p: &[f64], lambda: f64) -> SymMatrix {
        let MeanForm::Dense(mean) = &self.mean else {
            unreachable!("dense form only")
        };
        let n = self.n;
        let dim = n * self.big_n;
        let s = DMatrix::from_fn(dim, dim, |k, l| {
            let mut v = mean[(l, k)] * p[l / n] + p[k / n] * mean[(k, l)];
            if k == l {
                v += lambda * p[k / n];
            }
            v
        });
        SymMatrix::symmetrized(s)
    }

    /// Tightest `Δ` for the deviation constraint.
    pub fn delta(&self, p: &[f64]) -> f64 {
        self.dev.iter().zip(p).map(|(d, pi)| d * pi).fold(0.0, f64::max)
    }

    /// Tightest `σ²` for the variance constraint.
    pub fn sigma2(&self, p: &[f64]) -> Result<f64, CertifyError> {
        match &self.variance {
            Variance::A1(rows) => {
                let mut best: f64 = 0.0;
                if self.n == 1 {
                    for (i, row) in rows.iter().enumerate() {
                        let mut v = p[i] * p[i] * row.own[(0, 0)];
                        for (j, w) in &row.incoming {
                            v += p[*j] * p[*j] * w[(0, 0)];
                        }
                        best = best.max(v);
                    }
                    return Ok(best);
                }
                for (i, row) in rows.iter().enumerate() {
                    let mut m = &row.own * (p[i] * p[i]);
                    for (j, w) in &row.incoming {
                        m += w * (p[*j] * p[*j]);
                    }
                    if m.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    best = best.max(sym_eig_max(&SymMatrix::symmetrized(m))?);
                }
                Ok(best)
            }
            Variance::A2(rows) => {
                let dim = self.n * self.big_n;
                let mut m = DMatrix::zeros(dim, dim);
                let mut any = false;
                for (i, rv) in rows.iter().enumerate() {
                    if rv.local.iter().any(|&x| x != 0.0) {
                        rv.add_scaled_to(&mut m, p[i] * p[i]);
                        any = true;
                    }
                }
                if !any {
                    return Ok(0.0);
                }
                Ok(sym_eig_max(&SymMatrix::symmetrized(m))?.max(0.0))
            }
        }
    }
}

fn mean_form(mean: &DMatrix<f64>, n: usize) -> MeanForm {
    let dim = mean.nrows();
    let tol = NumericPolicy::DEFAULT.metzler;
    let metzler = (0..dim).all(|k| (0..dim).all(|l| k == l || mean[(k, l)] >= -tol));
    if !metzler {
        return MeanForm::Dense(mean.clone());
    }
    let diag: Vec<f64> = (0..dim).map(|k| mean[(k, k)]).collect();
    let mut coords = Vec::new();
    let mut entries = Vec::new();
    for k in 0..dim {
        for l in 0..dim {
            if k == l {
                continue;
            }
            let ekl = mean[(k, l)].max(0.0);
            let elk = mean[(l, k)].max(0.0);
            if ekl > 0.0 || elk > 0.0 {
                coords.push((k, l, 1.0));
                entries.push(SEntry {
                    bk: k / n,
                    ekl,
                    bl: l / n,
                    elk,
                });
            }
        }
    }
    // Entries are generated in row-major order, which is the CSR order.
    let csr = MetzlerCsr::from_entries(vec![0.0; dim], coords).expect("pattern entries are positive");
    MeanForm::Metzler { csr, entries, diag }
}

fn a1_data(model: &NetworkModel) -> Result<(Vec<f64>, Variance), CertifyError> {
    let big_n = model.subsystems();
    let n = model.state_dim();
    let mut dev = vec![0.0; big_n];
    let mut rows: Vec<A1Row> = (0..big_n)
        .map(|_| A1Row {
            own: DMatrix::zeros(n, n),
            incoming: Vec::new(),
        })
        .collect();
    for (&(i, j), dist) in model.blocks() {
        if dist.is_deterministic() {
            continue;
        }
        if i == j {
            // X_ii = p_i·U_ii ⊗ (A_ii + A_iiᵀ): both Kronecker terms land on
            // the same block.
            dev[i] = f64::max(dev[i], dist.esssup_sym_dev()?);
            rows[i].own += dist.sym_variance()?;
        } else {
            dev[i] = f64::max(dev[i], dist.esssup_dev()?);
            rows[i].own += dist.w(Side::Transposed);
            rows[j].incoming.push((i, dist.w(Side::Normal)));
        }
    }
    Ok((dev, Variance::A1(rows)))
}

fn a2_data(model: &NetworkModel) -> Result<(Vec<f64>, Variance), CertifyError> {
    let big_n = model.subsystems();
    let cap = NumericPolicy::DEFAULT.support_cap;
    let mut dev = vec![0.0; big_n];
    let mut rows = Vec::with_capacity(big_n);
    for (i, d) in dev.iter_mut().enumerate() {
        let dist = model.row_distribution(i, cap)?;
        *d = 2.0 * dist.esssup_dev()?;
        rows.push(model.row_var_s(i)?);
    }
    Ok((dev, Variance::A2(rows)))
}
