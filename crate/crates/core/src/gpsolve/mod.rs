//! Geometric programs: monomials, posynomials, structural validation, the
//! log-domain convex form and a barrier-Newton solver.

mod convex;
mod solver;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convex::{gp_to_convex, ConvexForm, LogSumExp};
pub use solver::{gp_solve, gp_solve_with, GpOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("malformed program: {}", .0.join("; "))]
    Malformed(Vec<String>),
    #[error("json: {0}")]
    Json(String),
}

/// `c · Π x_k^{e_k}`. Serialised as `{"c": c, "e": {name: e_k}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(rename = "c")]
    pub coeff: f64,
    #[serde(rename = "e", default)]
    pub exponents: BTreeMap<String, f64>,
}

impl Monomial {
    pub fn constant(coeff: f64) -> Self {
        Self {
            coeff,
            exponents: BTreeMap::new(),
        }
    }

    /// `x^1`.
    pub fn var(name: &str) -> Self {
        Self::constant(1.0).with(name, 1.0)
    }

    /// Multiplies by `x^e`.
    pub fn with(mut self, name: &str, e: f64) -> Self {
        if e != 0.0 {
            let slot = self.exponents.entry(name.to_string()).or_insert(0.0);
            *slot += e;
            if *slot == 0.0 {
                self.exponents.remove(name);
            }
        }
        self
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.clone();
        out.coeff *= other.coeff;
        for (k, e) in &other.exponents {
            out = out.with(k, *e);
        }
        out
    }

    pub fn scale(&self, c: f64) -> Monomial {
        Monomial {
            coeff: self.coeff * c,
            exponents: self.exponents.clone(),
        }
    }

    pub fn pow(&self, e: f64) -> Monomial {
        Monomial {
            coeff: self.coeff.powf(e),
            exponents: self.exponents.iter().map(|(k, x)| (k.clone(), x * e)).collect(),
        }
    }

    /// Evaluates at `values`; missing variables are an error.
    pub fn eval(&self, values: &BTreeMap<String, f64>) -> Result<f64, String> {
        let mut v = self.coeff;
        for (k, e) in &self.exponents {
            let x = values.get(k).ok_or_else(|| format!("no value for variable {k}"))?;
            v *= x.powf(*e);
        }
        Ok(v)
    }
}

/// Sum of monomials. Zero-coefficient terms are dropped on construction;
/// the empty posynomial is the zero function.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Posynomial {
    pub terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Self {
            terms: terms.into_iter().filter(|t| t.coeff != 0.0).collect(),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Posynomial) -> Posynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Posynomial { terms }
    }

    pub fn push(&mut self, m: Monomial) {
        if m.coeff != 0.0 {
            self.terms.push(m);
        }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Posynomial {
        Posynomial::new(self.terms.iter().map(|t| t.mul(m)).collect())
    }

    pub fn mul(&self, other: &Posynomial) -> Posynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.mul(b));
            }
        }
        Posynomial::new(terms)
    }

    pub fn scale(&self, c: f64) -> Posynomial {
        Posynomial::new(self.terms.iter().map(|t| t.scale(c)).collect())
    }

    pub fn eval(&self, values: &BTreeMap<String, f64>) -> Result<f64, String> {
        self.terms.iter().map(|t| t.eval(values)).sum()
    }

    /// The single term when this is a monomial.
    pub fn as_monomial(&self) -> Option<&Monomial> {
        match self.terms.as_slice() {
            [m] => Some(m),
            _ => None,
        }
    }

    /// Merges terms with identical exponents.
    pub fn simplified(&self) -> Posynomial {
        let mut merged: Vec<Monomial> = Vec::new();
        let mut index: BTreeMap<Vec<(String, u64)>, usize> = BTreeMap::new();
        for t in &self.terms {
            let key: Vec<(String, u64)> = t.exponents.iter().map(|(k, e)| (k.clone(), e.to_bits())).collect();
            match index.get(&key) {
                Some(&k) => merged[k].coeff += t.coeff,
                None => {
                    index.insert(key, merged.len());
                    merged.push(t.clone());
                }
            }
        }
        Posynomial::new(merged)
    }

}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Posynomial::new(vec![m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpVariable {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

/// `minimize f_0(x)` subject to `f_i(x) ≤ 1` and `g_j(x) = 1` over named
/// positive variables with optional box bounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometricProgram {
    pub variables: Vec<GpVariable>,
    pub objective: Posynomial,
    pub ineqs: Vec<Posynomial>,
    /// Equalities; well-formed programs use single-term entries.
    pub eqs: Vec<Posynomial>,
    /// Optional names for the inequalities, used in diagnostics.
    pub ineq_labels: Vec<String>,
}

impl GeometricProgram {
    pub fn new(objective: Posynomial) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn add_var(&mut self, name: &str, lo: Option<f64>, hi: Option<f64>) {
        self.variables.push(GpVariable {
            name: name.to_string(),
            lo,
            hi,
        });
    }

    /// Adds `f ≤ 1`. Zero posynomials are vacuous and skipped.
    pub fn add_ineq(&mut self, label: impl Into<String>, f: Posynomial) {
        if f.is_zero() {
            return;
        }
        self.ineqs.push(f);
        self.ineq_labels.push(label.into());
    }

    /// Adds `g = 1`.
    pub fn add_eq(&mut self, g: Monomial) {
        self.eqs.push(g.into());
    }

    pub fn ineq_label(&self, k: usize) -> String {
        self.ineq_labels.get(k).cloned().unwrap_or_else(|| format!("ineq {}", k + 1))
    }

    pub fn from_json_str(s: &str) -> Result<Self, GpError> {
        let f: GpFile = serde_json::from_str(s).map_err(|e| GpError::Json(e.to_string()))?;
        Ok(Self {
            variables: f
                .vars
                .into_iter()
                .map(|v| match v {
                    VarSpec::Name(name) => GpVariable { name, lo: None, hi: None },
                    VarSpec::Full(v) => v,
                })
                .collect(),
            objective: f.objective,
            ineqs: f.ineqs,
            eqs: f
                .eqs
                .into_iter()
                .map(|e| match e {
                    EqSpec::Term(m) => m.into(),
                    EqSpec::Terms(p) => p,
                })
                .collect(),
            ineq_labels: Vec::new(),
        })
    }

    pub fn to_json_string(&self) -> String {
        let f = GpFile {
            vars: self
                .variables
                .iter()
                .map(|v| {
                    if v.lo.is_none() && v.hi.is_none() {
                        VarSpec::Name(v.name.clone())
                    } else {
                        VarSpec::Full(v.clone())
                    }
                })
                .collect(),
            objective: self.objective.clone(),
            ineqs: self.ineqs.clone(),
            eqs: self
                .eqs
                .iter()
                .map(|e| match e.as_monomial() {
                    Some(m) => EqSpec::Term(m.clone()),
                    None => EqSpec::Terms(e.clone()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("program serialises")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GpFile {
    vars: Vec<VarSpec>,
    objective: Posynomial,
    #[serde(default)]
    ineqs: Vec<Posynomial>,
    #[serde(default)]
    eqs: Vec<EqSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum VarSpec {
    Name(String),
    Full(GpVariable),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EqSpec {
    Term(Monomial),
    Terms(Posynomial),
}

/// One structural defect found by [`gp_validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpViolation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for GpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Structural check; an empty list means the program is well formed.
pub fn gp_validate(program: &GeometricProgram) -> Vec<GpViolation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: String| out.push(GpViolation { location, message });

    let mut declared = BTreeSet::new();
    for v in &program.variables {
        if !declared.insert(v.name.as_str()) {
            push(format!("variable {}", v.name), "duplicate variable".into());
        }
        let lo_ok = v.lo.map_or(true, |x| x > 0.0 && x.is_finite());
        let hi_ok = v.hi.map_or(true, |x| x > 0.0 && x.is_finite());
        let order_ok = match (v.lo, v.hi) {
            (Some(l), Some(h)) => l <= h,
            _ => true,
        };
        if !(lo_ok && hi_ok && order_ok) {
            push(format!("variable {}", v.name), "bounds must be positive and ordered".into());
        }
    }

    let check_posy = |location: String, p: &Posynomial, push: &mut dyn FnMut(String, String)| {
        for t in &p.terms {
            if !(t.coeff >= 0.0) || !t.coeff.is_finite() {
                push(location.clone(), "negative coefficient".into());
            }
            for (k, e) in &t.exponents {
                if !declared.contains(k.as_str()) {
                    push(location.clone(), format!("undeclared variable {k}"));
                }
                if !e.is_finite() {
                    push(location.clone(), format!("non-finite exponent on {k}"));
                }
            }
        }
    };

    if program.objective.is_zero() {
        push("objective".into(), "empty posynomial".into());
    }
    check_posy("objective".into(), &program.objective, &mut push);
    for (k, f) in program.ineqs.iter().enumerate() {
        let loc = program.ineq_label(k);
        if f.is_zero() {
            push(loc.clone(), "empty posynomial".into());
        }
        check_posy(loc, f, &mut push);
    }
    for (k, g) in program.eqs.iter().enumerate() {
        let loc = format!("eq {}", k + 1);
        if g.terms.len() != 1 {
            push(loc.clone(), "equality not monomial".into());
        } else if !(g.terms[0].coeff > 0.0) {
            push(loc.clone(), "equality coefficient must be positive".into());
        }
        check_posy(loc, g, &mut push);
    }
    out
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    Unbounded,
}

impl fmt::Display for GpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GpStatus::Optimal => "optimal",
            GpStatus::Infeasible => "infeasible",
            GpStatus::MaxIterations => "max-iterations",
            GpStatus::Unbounded => "unbounded",
        })
    }
}

/// Numeric fields other than `status` and `newton_steps` are zero when no
/// point was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSolution {
    pub status: GpStatus,
    /// Empty unless a point was found.
    pub values: BTreeMap<String, f64>,
    pub objective_value: f64,
    /// Stationarity residual in the log domain.
    pub kkt_residual: f64,
    /// Barrier duality-gap surrogate `m/t`.
    pub gap: f64,
    pub newton_steps: usize,
    /// Largest `f_i(x) − 1` over inequalities (−1 when there are none) and
    /// `|g_j(x) − 1|` over equalities, at the returned point.
    pub max_ineq_residual: f64,
    pub max_eq_residual: f64,
}
