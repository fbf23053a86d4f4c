//! Parametrised model families. Indices are 0-based in memory and 1-based
//! in JSON files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DesignError;
use crate::gpsolve::{Monomial, Posynomial};
use crate::model::{FiniteMatrixDistribution, Mode, NetworkModel};

/// Design parameter `r_k ∈ [lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParam {
    pub name: String,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    1e-4
}

fn default_hi() -> f64 {
    1.0
}

/// `c + Σ_k coeff_k·r_k`, used for support weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AffineExpr {
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub r: BTreeMap<String, f64>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { c, r: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, coeff: f64) -> Self {
        *self.r.entry(name.to_string()).or_insert(0.0) += coeff;
        self
    }

    pub fn eval(&self, values: &BTreeMap<String, f64>) -> Result<f64, String> {
        let mut v = self.c;
        for (k, a) in &self.r {
            v += a * values.get(k).ok_or_else(|| format!("no value for parameter {k}"))?;
        }
        Ok(v)
    }
}

/// Support point with a parameter-dependent weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub w: AffineExpr,
    #[serde(with = "matrix_rows")]
    pub m: DMatrix<f64>,
}

/// One random block (independent blocks) or block-row (independent rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyUnit {
    pub i: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    pub support: Vec<FamilyPoint>,
}

/// Distributions as functions of `r`; the variant matches the family mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Realization {
    Blocks(Vec<FamilyUnit>),
    Rows(Vec<FamilyUnit>),
}

/// Entry `(row, col)` of a sparse matrix of posynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosyEntry {
    pub row: usize,
    pub col: usize,
    pub f: Posynomial,
}

/// `η_ij(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSurrogate {
    pub i: usize,
    pub j: usize,
    pub f: Posynomial,
}

/// `Φ_ij(r)` or `Ψ_ij(r)` as sparse `n × n` posynomial matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrixSurrogate {
    pub i: usize,
    pub j: usize,
    pub entries: Vec<PosyEntry>,
}

/// `η_i(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSurrogate {
    pub i: usize,
    pub f: Posynomial,
}

/// `Φ_i(r)` as a sparse `nN × nN` posynomial matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMatrixSurrogate {
    pub i: usize,
    pub entries: Vec<PosyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogates {
    A1 {
        eta: Vec<BlockSurrogate>,
        phi: Vec<BlockMatrixSurrogate>,
        psi: Vec<BlockMatrixSurrogate>,
    },
    A2 {
        eta: Vec<RowSurrogate>,
        phi: Vec<RowMatrixSurrogate>,
    },
}

/// Model family `A(r)` with `E[A] = E[A₊](r) − E[A₋](r)`, deviation and
/// variance surrogates, cost and constraints.
///
/// Validity rules: `mean_minus` holds one monomial per state coordinate
/// with a positive coefficient; mean and surrogate posynomials use only
/// the parameters; cost and constraints may also use `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFamily {
    #[serde(rename = "N")]
    pub subsystems: usize,
    pub n: usize,
    pub mode: Mode,
    pub params: Vec<DesignParam>,
    pub mean_plus: Vec<PosyEntry>,
    pub mean_minus: Vec<Monomial>,
    pub surrogates: Surrogates,
    pub cost: Posynomial,
    pub cost_bound: f64,
    #[serde(default)]
    pub ineq_constraints: Vec<Posynomial>,
    #[serde(default)]
    pub eq_constraints: Vec<Monomial>,
    pub realization: Realization,
}

/// Variable names reserved by the design programs.
pub(crate) const RESERVED: [&str; 5] = ["a", "delta", "sigma", "rho", "lambda"];

impl DesignFamily {
    pub fn dim(&self) -> usize {
        self.n * self.subsystems
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Structural checks that do not depend on parameter values.
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |s: String| Err(DesignError::InvalidFamily(s));
        let (n, big_n, dim) = (self.n, self.subsystems, self.dim());
        if n == 0 || big_n == 0 {
            return bad("dimensions must be positive".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.params {
            if RESERVED.contains(&p.name.as_str()) || is_generated_name(&p.name) {
                return bad(format!("parameter name {} is reserved", p.name));
            }
            if !names.insert(p.name.as_str()) {
                return bad(format!("parameter {} declared twice", p.name));
            }
            if !(p.lo > 0.0 && p.lo <= p.hi && p.hi.is_finite()) {
                return bad(format!("parameter {} has invalid bounds [{}, {}]", p.name, p.lo, p.hi));
            }
        }
        let uses_only = |f: &Posynomial, extra: &[&str], what: &str| -> Result<(), DesignError> {
            for t in &f.terms {
                if !(t.coeff >= 0.0 && t.coeff.is_finite()) {
                    return bad(format!("{what} has a negative coefficient"));
                }
                for k in t.exponents.keys() {
                    if !names.contains(k.as_str()) && !extra.contains(&k.as_str()) {
                        return bad(format!("{what} uses unknown variable {k}"));
                    }
                }
            }
            Ok(())
        };
        for e in &self.mean_plus {
            if e.row >= dim || e.col >= dim {
                return bad(format!("mean_plus entry ({},{}) out of range", e.row + 1, e.col + 1));
            }
            uses_only(&e.f, &[], &format!("mean_plus entry ({},{})", e.row + 1, e.col + 1))?;
        }
        if self.mean_minus.len() != dim {
            return bad(format!("mean_minus has {} entries, expected {dim}", self.mean_minus.len()));
        }
        for (k, m) in self.mean_minus.iter().enumerate() {
            if !(m.coeff > 0.0 && m.coeff.is_finite()) {
                return bad(format!("mean_minus entry {} must be a monomial with positive coefficient", k + 1));
            }
            uses_only(&m.clone().into(), &[], &format!("mean_minus entry {}", k + 1))?;
        }
        match (&self.surrogates, self.mode) {
            (Surrogates::A1 { eta, phi, psi }, Mode::A1) => {
                for s in eta {
                    if s.i >= big_n || s.j >= big_n {
                        return bad(format!("eta ({},{}) out of range", s.i + 1, s.j + 1));
                    }
                    uses_only(&s.f, &[], &format!("eta ({},{})", s.i + 1, s.j + 1))?;
                }
                for (what, list) in [("phi", phi), ("psi", psi)] {
                    for s in list {
                        if s.i >= big_n || s.j >= big_n {
                            return bad(format!("{what} ({},{}) out of range", s.i + 1, s.j + 1));
                        }
                        for e in &s.entries {
                            if e.row >= n || e.col >= n {
                                return bad(format!("{what} ({},{}) entry out of range", s.i + 1, s.j + 1));
                            }
                            uses_only(&e.f, &[], &format!("{what} ({},{})", s.i + 1, s.j + 1))?;
                        }
                    }
                }
            }
            (Surrogates::A2 { eta, phi }, Mode::A2) => {
                for s in eta {
                    if s.i >= big_n {
                        return bad(format!("eta row {} out of range", s.i + 1));
                    }
                    uses_only(&s.f, &[], &format!("eta row {}", s.i + 1))?;
                }
                for s in phi {
                    if s.i >= big_n {
                        return bad(format!("phi row {} out of range", s.i + 1));
                    }
                    for e in &s.entries {
                        if e.row >= dim || e.col >= dim {
                            return bad(format!("phi row {} entry out of range", s.i + 1));
                        }
                        uses_only(&e.f, &[], &format!("phi row {}", s.i + 1))?;
                    }
                }
            }
            _ => return bad("surrogates do not match the family mode".into()),
        }
        uses_only(&self.cost, &["rho"], "cost")?;
        if !(self.cost_bound > 0.0 && self.cost_bound.is_finite()) {
            return bad("cost_bound must be positive".into());
        }
        for (k, f) in self.ineq_constraints.iter().enumerate() {
            uses_only(f, &["rho"], &format!("constraint {}", k + 1))?;
        }
        for (k, g) in self.eq_constraints.iter().enumerate() {
            if !(g.coeff > 0.0) {
                return bad(format!("equality {} must have a positive coefficient", k + 1));
            }
            uses_only(&g.clone().into(), &["rho"], &format!("equality {}", k + 1))?;
        }
        match (&self.realization, self.mode) {
            (Realization::Blocks(units), Mode::A1) => {
                for u in units {
                    let Some(j) = u.j else {
                        return bad(format!("block in row {} lacks a column index", u.i + 1));
                    };
                    if u.i >= big_n || j >= big_n {
                        return bad(format!("block ({},{}) out of range", u.i + 1, j + 1));
                    }
                    self.check_points(u, (n, n))?;
                }
            }
            (Realization::Rows(units), Mode::A2) => {
                for u in units {
                    if u.i >= big_n {
                        return bad(format!("row {} out of range", u.i + 1));
                    }
                    self.check_points(u, (n, dim))?;
                }
            }
            _ => return bad("realization does not match the family mode".into()),
        }
        Ok(())
    }

    fn check_points(&self, u: &FamilyUnit, shape: (usize, usize)) -> Result<(), DesignError> {
        if u.support.is_empty() {
            return Err(DesignError::InvalidFamily(format!("unit in row {} has empty support", u.i + 1)));
        }
        for p in &u.support {
            if p.m.shape() != shape {
                return Err(DesignError::InvalidFamily(format!(
                    "unit in row {} has a support matrix of shape {:?}, expected {shape:?}",
                    u.i + 1,
                    p.m.shape()
                )));
            }
            for k in p.w.r.keys() {
                if !self.params.iter().any(|q| &q.name == k) {
                    return Err(DesignError::InvalidFamily(format!("weight uses unknown parameter {k}")));
                }
            }
        }
        Ok(())
    }

    fn values(&self, r: &[f64]) -> Result<BTreeMap<String, f64>, DesignError> {
        if r.len() != self.params.len() {
            return Err(DesignError::InvalidFamily(format!(
                "expected {} parameter values, got {}",
                self.params.len(),
                r.len()
            )));
        }
        Ok(self.params.iter().map(|p| p.name.clone()).zip(r.iter().copied()).collect())
    }

    /// Concrete model at parameter values `r` (ordered as `params`).
    /// Support points with zero weight are dropped.
    pub fn realize(&self, r: &[f64]) -> Result<NetworkModel, DesignError> {
        let values = self.values(r)?;
        let dist = |u: &FamilyUnit| -> Result<FiniteMatrixDistribution, DesignError> {
            let mut support = Vec::with_capacity(u.support.len());
            for p in &u.support {
                let w = p.w.eval(&values).map_err(DesignError::InvalidFamily)?;
                if w < -1e-12 {
                    return Err(DesignError::InvalidFamily(format!("negative weight {w} in row {}", u.i + 1)));
                }
                if w > 0.0 {
                    support.push((w, p.m.clone()));
                }
            }
            Ok(FiniteMatrixDistribution::new(support)?)
        };
        Ok(match &self.realization {
            Realization::Blocks(units) => {
                let mut blocks = Vec::with_capacity(units.len());
                for u in units {
                    blocks.push(((u.i, u.j.unwrap_or(u.i)), dist(u)?));
                }
                NetworkModel::a1(self.subsystems, self.n, blocks)?
            }
            Realization::Rows(units) => {
                let mut rows = Vec::with_capacity(units.len());
                for u in units {
                    rows.push((u.i, dist(u)?));
                }
                NetworkModel::a2(self.subsystems, self.n, rows)?
            }
        })
    }

    /// `E[A₊](r) − E[A₋](r)` as a dense matrix.
    pub fn mean_at(&self, r: &[f64]) -> Result<DMatrix<f64>, DesignError> {
        let values = self.values(r)?;
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for e in &self.mean_plus {
            m[(e.row, e.col)] += e.f.eval(&values).map_err(DesignError::InvalidFamily)?;
        }
        for (k, d) in self.mean_minus.iter().enumerate() {
            m[(k, k)] -= d.eval(&values).map_err(DesignError::InvalidFamily)?;
        }
        Ok(m)
    }

    pub fn from_json_str(text: &str) -> Result<Self, DesignError> {
        let mut f: DesignFamily = serde_json::from_str(text).map_err(|e| DesignError::InvalidFamily(format!("json: {e}")))?;
        f.shift_indices(false)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_json_string(&self) -> String {
        let mut f = self.clone();
        f.shift_indices(true).expect("shifting up cannot fail");
        serde_json::to_string_pretty(&f).expect("family serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DesignError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| DesignError::InvalidFamily(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    /// Converts between 0-based and 1-based indices.
    fn shift_indices(&mut self, up: bool) -> Result<(), DesignError> {
        let sh = |x: &mut usize| -> Result<(), DesignError> {
            if up {
                *x += 1;
            } else if *x == 0 {
                return Err(DesignError::InvalidFamily("indices in family files are 1-based".into()));
            } else {
                *x -= 1;
            }
            Ok(())
        };
        for e in &mut self.mean_plus {
            sh(&mut e.row)?;
            sh(&mut e.col)?;
        }
        match &mut self.surrogates {
            Surrogates::A1 { eta, phi, psi } => {
                for s in eta {
                    sh(&mut s.i)?;
                    sh(&mut s.j)?;
                }
                for s in phi.iter_mut().chain(psi.iter_mut()) {
                    sh(&mut s.i)?;
                    sh(&mut s.j)?;
                    for e in &mut s.entries {
                        sh(&mut e.row)?;
                        sh(&mut e.col)?;
                    }
                }
            }
            Surrogates::A2 { eta, phi } => {
                for s in eta {
                    sh(&mut s.i)?;
                }
                for s in phi {
                    sh(&mut s.i)?;
                    for e in &mut s.entries {
                        sh(&mut e.row)?;
                        sh(&mut e.col)?;
                    }
                }
            }
        }
        let units = match &mut self.realization {
            Realization::Blocks(u) | Realization::Rows(u) => u,
        };
        for u in units {
            sh(&mut u.i)?;
            if let Some(j) = u.j.as_mut() {
                sh(j)?;
            }
        }
        Ok(())
    }
}

/// Names of the form `p12`, `v3`, `w7` are generated by the builders.
fn is_generated_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('p' | 'v' | 'w')) && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(serde::de::Error::custom("support matrix must be a non-empty rectangular array"));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }
}
