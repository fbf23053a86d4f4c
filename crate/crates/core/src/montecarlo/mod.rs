//! Validation oracles: sampled realisations, the per-realisation stability
//! event, Monte-Carlo failure estimates and exact enumeration.
//!
//! The stability event of a realisation `A` at Lyapunov rate `λ` is the
//! existence of a diagonal `P ≻ 0` with `AᵀP + PA + λP ≺ 0`, which for
//! Metzler `A` is `perron(A) < −λ/2`. A certificate produces one such `P`
//! for the realisations it covers, so failures counted here never exceed
//! the failures of the certificate's own event.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::linalg::{LinalgError, MetzlerCsr};
use crate::model::{FiniteMatrixDistribution, Mode, ModelError, NetworkModel};
use crate::policy::NumericPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("realisation is not Metzler: entry ({row},{col}) = {value:e}")]
    NotMetzler { row: usize, col: usize, value: f64 },
    #[error("joint support size {size} exceeds the enumeration cap {cap}")]
    SupportTooLarge { size: u128, cap: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for McError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotMetzler { row, col, value } => McError::NotMetzler { row, col, value },
            other => McError::Linalg(other),
        }
    }
}

/// Meaning of the decay rate `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateConvention {
    /// `V(x) = xᵀPx` decays like `e^{−λt}`: `perron(A) < −λ/2`.
    #[default]
    Lyapunov,
    /// The state decays like `e^{−λt}`: `perron(A) < −λ`.
    State,
}

impl RateConvention {
    /// Perron values strictly below this are stable.
    pub fn threshold(self, lambda: f64) -> f64 {
        match self {
            RateConvention::Lyapunov => -lambda / 2.0,
            RateConvention::State => -lambda,
        }
    }
}

impl std::fmt::Display for RateConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateConvention::Lyapunov => "lyapunov",
            RateConvention::State => "state",
        })
    }
}

impl std::str::FromStr for RateConvention {
    type Err = McError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lyapunov" => Ok(RateConvention::Lyapunov),
            "state" => Ok(RateConvention::State),
            other => Err(McError::Invalid(format!("unknown rate convention '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub samples: u64,
    pub failures: u64,
    pub p_hat: f64,
    /// One-sided 95% Clopper–Pearson lower bound.
    pub ci_lower: f64,
    /// One-sided 95% Clopper–Pearson upper bound.
    pub ci_upper: f64,
    pub seed: u64,
    pub lambda: f64,
    pub rate_convention: RateConvention,
}

impl McReport {
    pub const CSV_HEADER: &'static str = "samples,failures,p_hat,ci_lower,ci_upper,seed,lambda,rate_convention";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.samples,
            self.failures,
            crate::fmt_sig(self.p_hat),
            crate::fmt_sig(self.ci_lower),
            crate::fmt_sig(self.ci_upper),
            self.seed,
            crate::fmt_sig(self.lambda),
            self.rate_convention
        )
    }
}

/// Confidence level of the reported bounds.
pub const CONFIDENCE: f64 = 0.95;

/// One-sided Clopper–Pearson bounds `(lower, upper)` for `failures` out of
/// `samples`, each at confidence `level`.
pub fn clopper_pearson(failures: u64, samples: u64, level: f64) -> (f64, f64) {
    assert!(samples > 0 && failures <= samples);
    let (k, n) = (failures as f64, samples as f64);
    let alpha = 1.0 - level;
    let lower = if failures == 0 {
        0.0
    } else {
        beta_quantile(k, n - k + 1.0, alpha).0
    };
    let upper = if failures == samples {
        1.0
    } else {
        beta_quantile(k + 1.0, n - k, 1.0 - alpha).1
    };
    (lower, upper)
}

/// Bracket `(lo, hi)` around the `q`-quantile of `Beta(a, b)`, found by
/// bisection on the regularised incomplete beta function. The bracket ends
/// are used so that rounding widens the confidence interval.
fn beta_quantile(a: f64, b: f64, q: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// `true` iff `perron(A) < −λ/2`.
pub fn stable_with_rate(a: &DMatrix<f64>, lambda: f64) -> Result<bool, McError> {
    stable_with_rate_as(a, lambda, RateConvention::Lyapunov)
}

pub fn stable_with_rate_as(a: &DMatrix<f64>, lambda: f64, convention: RateConvention) -> Result<bool, McError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(McError::Invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(MetzlerCsr::from_dense(a)?.perron_below(convention.threshold(lambda))?)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream key of unit `(i, j)` in draw `draw`: SplitMix64 finaliser chained
/// over `seed, i, j, draw`. Rows of independent-row models use `j = 2⁶⁴−1`.
pub fn substream_seed(seed: u64, i: u64, j: u64, draw: u64) -> u64 {
    mix(mix(mix(mix(seed) ^ i) ^ j) ^ draw)
}

/// Uniform in `[0, 1)` from the top 53 bits.
fn unit_uniform(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF choice of a support index.
fn pick(dist: &FiniteMatrixDistribution, u: f64) -> usize {
    let support = dist.support();
    let mut acc = 0.0;
    for (k, (w, _)) in support.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    support.len() - 1
}

const ROW_KEY: u64 = u64::MAX;

/// Realisation number `draw` of the stream `seed`.
pub fn sample_realization(model: &NetworkModel, seed: u64, draw: u64) -> DMatrix<f64> {
    let n = model.state_dim();
    let dim = model.dim();
    let mut a = DMatrix::zeros(dim, dim);
    match model.mode() {
        Mode::A1 => {
            for (&(i, j), dist) in model.blocks() {
                let u = unit_uniform(substream_seed(seed, i as u64, j as u64, draw));
                let m = &dist.support()[pick(dist, u)].1;
                a.view_mut((i * n, j * n), (n, n)).copy_from(m);
            }
        }
        Mode::A2 => {
            for (&i, dist) in model.rows() {
                let u = unit_uniform(substream_seed(seed, i as u64, ROW_KEY, draw));
                let m = &dist.support()[pick(dist, u)].1;
                a.view_mut((i * n, 0), (n, dim)).copy_from(m);
            }
        }
    }
    a
}

/// Sparse realisation; zero entries stay out of the pattern.
fn sample_sparse(model: &NetworkModel, seed: u64, draw: u64) -> Result<MetzlerCsr, McError> {
    let n = model.state_dim();
    let dim = model.dim();
    let mut diag = vec![0.0; dim];
    let mut entries = Vec::new();
    let mut place = |r0: usize, c0: usize, m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let (gr, gc) = (r0 + r, c0 + c);
                let x = m[(r, c)];
                if gr == gc {
                    diag[gr] += x;
                } else if x != 0.0 {
                    entries.push((gr, gc, x));
                }
            }
        }
    };
    match model.mode() {
        Mode::A1 => {
            for (&(i, j), dist) in model.blocks() {
                let u = unit_uniform(substream_seed(seed, i as u64, j as u64, draw));
                place(i * n, j * n, &dist.support()[pick(dist, u)].1);
            }
        }
        Mode::A2 => {
            for (&i, dist) in model.rows() {
                let u = unit_uniform(substream_seed(seed, i as u64, ROW_KEY, draw));
                place(i * n, 0, &dist.support()[pick(dist, u)].1);
            }
        }
    }
    Ok(MetzlerCsr::from_entries(diag, entries)?)
}

fn check_lambdas(lambdas: &[f64]) -> Result<(), McError> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(McError::Invalid(format!("lambda must be nonnegative, got {l}")));
    }
    Ok(())
}

/// Monte-Carlo estimate of `P(not stable with rate λ)`.
pub fn estimate_instability_prob(model: &NetworkModel, lambda: f64, samples: u64, seed: u64) -> Result<McReport, McError> {
    let mut out = estimate_instability_probs(model, &[lambda], samples, seed, RateConvention::Lyapunov)?;
    Ok(out.remove(0))
}

/// Estimates at several rates from one set of draws; the Perron value of
/// each draw is computed once.
pub fn estimate_instability_probs(
    model: &NetworkModel,
    lambdas: &[f64],
    samples: u64,
    seed: u64,
    convention: RateConvention,
) -> Result<Vec<McReport>, McError> {
    if samples == 0 {
        return Err(McError::Invalid("samples must be at least 1".into()));
    }
    check_lambdas(lambdas)?;
    let perrons = perron_samples(model, samples, seed)?;
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let t = convention.threshold(lambda);
            let failures = perrons.iter().filter(|&&v| !(v < t)).count() as u64;
            let (ci_lower, ci_upper) = clopper_pearson(failures, samples, CONFIDENCE);
            McReport {
                samples,
                failures,
                p_hat: failures as f64 / samples as f64,
                ci_lower,
                ci_upper,
                seed,
                lambda,
                rate_convention: convention,
            }
        })
        .collect())
}

/// Perron values of draws `0..samples`, in draw order.
pub fn perron_samples(model: &NetworkModel, samples: u64, seed: u64) -> Result<Vec<f64>, McError> {
    (0..samples)
        .into_par_iter()
        .map(|draw| Ok(sample_sparse(model, seed, draw)?.perron_value()?))
        .collect()
}

/// Exact `P(not stable with rate λ)` by enumerating the joint support.
pub fn brute_force_prob(model: &NetworkModel, lambda: f64) -> Result<f64, McError> {
    brute_force_prob_as(model, lambda, RateConvention::Lyapunov)
}

pub fn brute_force_prob_as(model: &NetworkModel, lambda: f64, convention: RateConvention) -> Result<f64, McError> {
    check_lambdas(&[lambda])?;
    let cap = NumericPolicy::DEFAULT.support_cap;
    let size = model.joint_support_size();
    if size > cap as u128 {
        return Err(McError::SupportTooLarge { size, cap });
    }
    let n = model.state_dim();
    let dim = model.dim();
    // (row offset, column offset, distribution) per independent unit.
    let units: Vec<(usize, usize, &FiniteMatrixDistribution)> = match model.mode() {
        Mode::A1 => model.blocks().iter().map(|(&(i, j), d)| (i * n, j * n, d)).collect(),
        Mode::A2 => model.rows().iter().map(|(&i, d)| (i * n, 0, d)).collect(),
    };
    let threshold = convention.threshold(lambda);
    let weights: Vec<f64> = (0..size as usize)
        .into_par_iter()
        .map(|index| {
            let mut a = DMatrix::zeros(dim, dim);
            let mut weight = 1.0;
            let mut rest = index;
            for &(r0, c0, dist) in &units {
                let s = dist.support();
                let (w, m) = &s[rest % s.len()];
                rest /= s.len();
                weight *= w;
                a.view_mut((r0, c0), m.shape()).copy_from(m);
            }
            let stable = MetzlerCsr::from_dense(&a)?.perron_below(threshold)?;
            Ok(if stable { 0.0 } else { weight })
        })
        .collect::<Result<_, McError>>()?;
    // Sequential sum keeps the result independent of the thread count.
    Ok(weights.iter().sum::<f64>().min(1.0))
}

#[cfg(test)]
mod tests;
