//! Stability certificates with diagonal Lyapunov scaling `P = ⊕ p_i I_n`:
//! moment-based bounds, certificate checking, the search over `p`, and the
//! minimum unreliability level.

mod evaluator;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernstein::{lemma1_lhs, rho_of_eps, BernsteinError};
use crate::linalg::LinalgError;
use crate::model::{Mode, ModelError, NetworkModel};
use crate::policy::NumericPolicy;

pub use evaluator::{Evaluator, Workspace};
pub use search::{
    min_unreliability, search_certificate, search_certificate_with, SearchOptions, SearchOutcome, Searcher,
    Unreliability,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("model is not positive: {0}")]
    NotPositive(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("invalid certificate parameters: {0}")]
    InvalidParams(String),
    #[error("bisection and closed form disagree: {0}")]
    Disagreement(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Bernstein(#[from] BernsteinError),
}

/// Witness `(p, a, Δ, σ, ρ)` for the certificate at decay rate `λ` and
/// unreliability `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub p: Vec<f64>,
    pub a: f64,
    pub delta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub eps: f64,
    pub mode: Mode,
}

impl CertificateParams {
    /// Multiplies `(p, a, Δ, σ)` jointly by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: self.p.iter().map(|x| x * c).collect(),
            a: self.a * c,
            delta: self.delta * c,
            sigma: self.sigma * c,
            ..self.clone()
        }
    }

    /// Canonical representative with `max p_i = 1`.
    pub fn normalized(&self) -> Self {
        let top = self.p.iter().copied().fold(0.0, f64::max);
        if top > 0.0 && top.is_finite() {
            self.scaled(1.0 / top)
        } else {
            self.clone()
        }
    }

    /// Same witness at a different unreliability level.
    pub fn with_eps(&self, eps: f64, n: usize, big_n: usize) -> Result<Self, CertifyError> {
        Ok(Self {
            eps,
            rho: rho_of_eps(eps, n, big_n)?,
            ..self.clone()
        })
    }
}

/// Margins of the four certificate conditions (positive means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// `a_max(p) − a`.
    pub mean_decay: f64,
    /// `3 − (2ρΔ/a + 6ρσ²/a²)`; must exceed the strict margin.
    pub tail_bound: f64,
    /// `Δ − Δ(p)`.
    pub deviation_bound: f64,
    /// `σ² − σ(p)²`.
    pub variance_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    pub feasible: bool,
    pub witness: Option<CertificateParams>,
    pub slack: Option<Slacks>,
    /// Labels of violated conditions, or of tight ones when feasible.
    pub binding: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl CertResult {
    fn infeasible(diagnostic: impl Into<String>) -> Self {
        Self {
            feasible: false,
            witness: None,
            slack: None,
            binding: Vec::new(),
            diagnostics: vec![diagnostic.into()],
        }
    }
}

pub const MEAN_DECAY: &str = "mean_decay";
pub const TAIL_BOUND: &str = "tail_bound";
pub const DEVIATION_BOUND: &str = "deviation_bound";
pub const VARIANCE_BOUND: &str = "variance_bound";

/// Tightest `(Δ, σ)` for the independent-block certificate.
pub fn delta_sigma_a1(model: &NetworkModel, p: &[f64]) -> Result<(f64, f64), CertifyError> {
    delta_sigma(model, p, Mode::A1)
}

/// Tightest `(Δ, σ)` for the independent-row certificate.
pub fn delta_sigma_a2(model: &NetworkModel, p: &[f64]) -> Result<(f64, f64), CertifyError> {
    delta_sigma(model, p, Mode::A2)
}

fn delta_sigma(model: &NetworkModel, p: &[f64], mode: Mode) -> Result<(f64, f64), CertifyError> {
    check_p(p, model.subsystems())?;
    let ev = Evaluator::new(model, mode)?;
    Ok((ev.delta(p), ev.sigma2(p)?.max(0.0).sqrt()))
}

/// Largest `a` with `E[A]ᵀP + P E[A] + aI + λP ⪯ 0`; may be nonpositive.
pub fn a_max(model: &NetworkModel, p: &[f64], lambda: f64) -> Result<f64, CertifyError> {
    check_p(p, model.subsystems())?;
    let mode = model.mode();
    let ev = Evaluator::new(model, mode)?;
    let mut ws = ev.workspace();
    ev.a_max(p, lambda, &mut ws)
}

fn check_p(p: &[f64], big_n: usize) -> Result<(), CertifyError> {
    if p.len() != big_n {
        return Err(CertifyError::InvalidParams(format!("p has {} entries, expected {big_n}", p.len())));
    }
    if p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CertifyError::InvalidParams("p must be positive and finite".into()));
    }
    Ok(())
}

/// Verifies a certificate witness.
///
/// Non-strict conditions are compared with a relative slack of
/// `policy.relative_slack` so that jointly rescaled witnesses receive the
/// same verdict; the tail condition must hold with the absolute margin
/// `policy.strict_margin`, which dominates the effect of that slack.
pub fn check_certificate(model: &NetworkModel, params: &CertificateParams) -> Result<CertResult, CertifyError> {
    let ev = Evaluator::new(model, params.mode)?;
    check_with(&ev, params)
}

pub(crate) fn check_with(ev: &Evaluator, params: &CertificateParams) -> Result<CertResult, CertifyError> {
    let policy = NumericPolicy::DEFAULT;
    let (n, big_n) = (ev.state_dim(), ev.subsystems());
    check_p(&params.p, big_n)?;
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(CertifyError::InvalidParams(format!("lambda must be nonnegative, got {}", params.lambda)));
    }
    if params.mode != ev.mode() {
        return Err(CertifyError::ModeMismatch(format!(
            "witness is for {} but evaluator uses {}",
            params.mode,
            ev.mode()
        )));
    }
    let rho = rho_of_eps(params.eps, n, big_n)?;
    if (rho - params.rho).abs() > 1e-9 * rho.abs().max(1.0) {
        return Err(CertifyError::InvalidParams(format!(
            "rho = {} is inconsistent with eps = {} (expected {rho})",
            params.rho, params.eps
        )));
    }
    if !(params.delta >= 0.0 && params.sigma >= 0.0 && params.delta.is_finite() && params.sigma.is_finite()) {
        return Err(CertifyError::InvalidParams("delta and sigma must be nonnegative".into()));
    }
    if !(params.a > 0.0 && params.a.is_finite()) {
        let mut r = CertResult::infeasible("a must be positive");
        r.binding.push(MEAN_DECAY.into());
        return Ok(r);
    }

    let w = params.normalized();
    let mut ws = ev.workspace();
    let a_max = ev.a_max(&w.p, w.lambda, &mut ws)?;
    let delta_p = ev.delta(&w.p);
    let sigma2_p = ev.sigma2(&w.p)?.max(0.0);
    let lhs = lemma1_lhs(w.delta, w.sigma, w.a, rho);

    let slack = Slacks {
        mean_decay: a_max - w.a,
        tail_bound: 3.0 - lhs,
        deviation_bound: w.delta - delta_p,
        variance_bound: w.sigma * w.sigma - sigma2_p,
    };
    let rs = policy.relative_slack;
    let mean_ok = ev.a_below_max(&w.p, w.lambda, w.a * (1.0 - rs), &mut ws)?;
    let checks = [
        (MEAN_DECAY, mean_ok, slack.mean_decay / w.a),
        (TAIL_BOUND, slack.tail_bound > policy.strict_margin, (slack.tail_bound - policy.strict_margin) / 3.0),
        (
            DEVIATION_BOUND,
            delta_p <= w.delta * (1.0 + rs),
            slack.deviation_bound / w.delta.max(f64::MIN_POSITIVE),
        ),
        (
            VARIANCE_BOUND,
            sigma2_p.sqrt() <= w.sigma * (1.0 + rs),
            slack.variance_bound / (w.sigma * w.sigma).max(f64::MIN_POSITIVE),
        ),
    ];
    let feasible = checks.iter().all(|c| c.1);
    let binding = if feasible {
        checks.iter().filter(|c| c.2 <= 1e-6).map(|c| c.0.to_string()).collect()
    } else {
        checks.iter().filter(|c| !c.1).map(|c| c.0.to_string()).collect()
    };
    let mut diagnostics = Vec::new();
    if a_max <= 0.0 {
        diagnostics.push(format!("mean system not certifiable at rate {} with this p", params.lambda));
    }
    Ok(CertResult {
        feasible,
        witness: Some(params.clone()),
        slack: Some(slack),
        binding,
        diagnostics,
    })
}

#[cfg(test)]
mod tests;
