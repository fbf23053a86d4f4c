//! Networked SIS epidemics with random protection: Erdős–Rényi graphs, the
//! linearised model `dx/dt = (B − D)x`, the `ε*` sweep over decay rates and
//! non-prevention probabilities, and the per-node protection design.

use nalgebra::{dmatrix, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{min_unreliability, CertifyError, SearchOptions};
use crate::design::{
    solve_design, AffineExpr, BlockMatrixSurrogate, BlockSurrogate, DesignError, DesignFamily, DesignMode,
    DesignParam, DesignResult, FamilyPoint, FamilyUnit, PosyEntry, Realization, Surrogates,
};
use crate::gpsolve::{Monomial, Posynomial};
use crate::linalg::{perron_value, LinalgError};
use crate::model::{FiniteMatrixDistribution, Mode, ModelError, NetworkModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SisError {
    #[error("invalid SIS parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Probability that an infection link is *not* protected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonPrevention {
    Uniform(f64),
    /// `r_ij = r_i`.
    PerNode(Vec<f64>),
    /// `r_ij`, row-major `N × N`.
    PerEdge(Vec<Vec<f64>>),
}

impl NonPrevention {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            NonPrevention::Uniform(r) => *r,
            NonPrevention::PerNode(r) => r[i],
            NonPrevention::PerEdge(r) => r[i][j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisParams {
    #[serde(rename = "N")]
    pub nodes: usize,
    pub edge_prob: f64,
    /// Recovery rate `δ`, equal for all nodes.
    pub delta: f64,
    /// Infection rate without protection `β̄`.
    pub beta_hi: f64,
    /// Infection rate with protection `β̲`.
    pub beta_lo: f64,
    pub r: NonPrevention,
    pub seed: u64,
}

impl SisParams {
    /// `δ = 1`, `β̄ = 1.1/λ_max(A_G)`, `β̲ = 0.1/λ_max(A_G)`, so that the
    /// unprotected network has Perron value `0.1`.
    pub fn calibrated(adjacency: &DMatrix<f64>, edge_prob: f64, seed: u64, r: NonPrevention) -> Result<Self, SisError> {
        let top = perron_value(adjacency)?;
        if !(top > 0.0) {
            return Err(SisError::Invalid("graph has no cycle, λ_max(A_G) = 0".into()));
        }
        Ok(Self {
            nodes: adjacency.nrows(),
            edge_prob,
            delta: 1.0,
            beta_hi: 1.1 / top,
            beta_lo: 0.1 / top,
            r,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), SisError> {
        let bad = |m: String| Err(SisError::Invalid(m));
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad(format!("edge probability {} outside [0, 1]", self.edge_prob));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("recovery rate {} must be positive", self.delta));
        }
        if !(0.0 <= self.beta_lo && self.beta_lo <= self.beta_hi && self.beta_hi.is_finite()) {
            return bad(format!("need 0 ≤ β̲ ≤ β̄, got {} and {}", self.beta_lo, self.beta_hi));
        }
        let n = self.nodes;
        let ok = |r: f64| r > 0.0 && r < 1.0;
        let valid = match &self.r {
            NonPrevention::Uniform(r) => ok(*r),
            NonPrevention::PerNode(r) => r.len() == n && r.iter().all(|x| ok(*x)),
            NonPrevention::PerEdge(r) => r.len() == n && r.iter().all(|row| row.len() == n && row.iter().all(|x| ok(*x))),
        };
        if !valid {
            return bad("non-prevention probabilities must lie in (0, 1) with one entry per node or edge".into());
        }
        Ok(())
    }
}

/// Directed Erdős–Rényi graph: each ordered pair `(i, j)`, `i ≠ j`, is an
/// edge with probability `p`. One ChaCha8 stream seeded with `seed` is read
/// in row-major order, one uniform per ordered pair.
pub fn erdos_renyi(nodes: usize, p: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(nodes, nodes);
    for i in 0..nodes {
        for j in 0..nodes {
            if i != j && rng.gen::<f64>() < p {
                a[(i, j)] = 1.0;
            }
        }
    }
    a
}

/// `d⁻[i] = Σ_j a_ij`.
pub fn in_degrees(adjacency: &DMatrix<f64>) -> Vec<usize> {
    (0..adjacency.nrows())
        .map(|i| adjacency.row(i).iter().filter(|&&x| x != 0.0).count())
        .collect()
}

fn check_adjacency(adjacency: &DMatrix<f64>, params: &SisParams) -> Result<(), SisError> {
    params.validate()?;
    if !adjacency.is_square() || adjacency.nrows() != params.nodes {
        return Err(SisError::Invalid(format!(
            "adjacency is {}x{}, expected {n}x{n}",
            adjacency.nrows(),
            adjacency.ncols(),
            n = params.nodes
        )));
    }
    Ok(())
}

/// Independent-block model with `A_ii = −δ` and, for each edge, `A_ij = β̄`
/// with probability `r_ij` and `β̲` otherwise.
pub fn build_sis_model(adjacency: &DMatrix<f64>, params: &SisParams) -> Result<NetworkModel, SisError> {
    check_adjacency(adjacency, params)?;
    let n = params.nodes;
    let mut blocks = Vec::new();
    for i in 0..n {
        blocks.push(((i, i), FiniteMatrixDistribution::deterministic(dmatrix![-params.delta])));
        for j in 0..n {
            if i != j && adjacency[(i, j)] != 0.0 {
                let dist = FiniteMatrixDistribution::two_point(
                    params.r.at(i, j),
                    dmatrix![params.beta_hi],
                    dmatrix![params.beta_lo],
                )?;
                blocks.push(((i, j), dist));
            }
        }
    }
    Ok(NetworkModel::a1(n, 1, blocks)?)
}

/// Unreliability target of the design constraint `log(N/0.2)/ρ ≤ 1`.
pub const DESIGN_EPS: f64 = 0.2;

/// Parameter name of node `i`'s non-prevention probability.
pub fn rate_name(i: usize) -> String {
    format!("r{}", i + 1)
}

/// Design family over per-node probabilities `r_i ∈ [1e−4, 1]` with
/// `E[A₊]_ij = a_ij(β̲ + r_i(β̄ − β̲))`, `E[A₋] = δI`, `η_ij = a_ij(β̄ − β̲)`,
/// `Φ_ij = Ψ_ij = a_ij r_i(β̄ − β̲)²`, cost `Σ 1/r_i ≤ cost_bound` and
/// `log(N/0.2)/ρ ≤ 1`.
pub fn sis_design_family(adjacency: &DMatrix<f64>, params: &SisParams, cost_bound: f64) -> Result<DesignFamily, SisError> {
    check_adjacency(adjacency, params)?;
    let n = params.nodes;
    let (hi, lo) = (params.beta_hi, params.beta_lo);
    let spread = hi - lo;
    let mut mean_plus = Vec::new();
    let mut eta = Vec::new();
    let mut phi = Vec::new();
    let mut units = Vec::new();
    let names: Vec<String> = (0..n).map(rate_name).collect();
    for i in 0..n {
        units.push(FamilyUnit {
            i,
            j: Some(i),
            support: vec![FamilyPoint {
                w: AffineExpr::constant(1.0),
                m: dmatrix![-params.delta],
            }],
        });
        let r = names[i].as_str();
        for j in (0..n).filter(|&j| j != i && adjacency[(i, j)] != 0.0) {
            mean_plus.push(PosyEntry {
                row: i,
                col: j,
                f: Posynomial::new(vec![Monomial::constant(lo), Monomial::constant(spread).with(r, 1.0)]),
            });
            eta.push(BlockSurrogate {
                i,
                j,
                f: Monomial::constant(spread).into(),
            });
            phi.push(BlockMatrixSurrogate {
                i,
                j,
                entries: vec![PosyEntry {
                    row: 0,
                    col: 0,
                    f: Monomial::constant(spread * spread).with(r, 1.0).into(),
                }],
            });
            units.push(FamilyUnit {
                i,
                j: Some(j),
                support: vec![
                    FamilyPoint {
                        w: AffineExpr::constant(0.0).with(r, 1.0),
                        m: dmatrix![hi],
                    },
                    FamilyPoint {
                        w: AffineExpr::constant(1.0).with(r, -1.0),
                        m: dmatrix![lo],
                    },
                ],
            });
        }
    }
    let family = DesignFamily {
        subsystems: n,
        n: 1,
        mode: Mode::A1,
        params: names
            .iter()
            .map(|name| DesignParam {
                name: name.clone(),
                lo: 1e-4,
                hi: 1.0,
            })
            .collect(),
        mean_plus,
        mean_minus: vec![Monomial::constant(params.delta); n],
        surrogates: Surrogates::A1 {
            eta,
            psi: phi.clone(),
            phi,
        },
        cost: Posynomial::new(names.iter().map(|r| Monomial::constant(1.0).with(r, -1.0)).collect()),
        cost_bound,
        ineq_constraints: vec![Monomial::constant((n as f64 / DESIGN_EPS).ln()).with("rho", -1.0).into()],
        eq_constraints: vec![],
        realization: Realization::Blocks(units),
    };
    family.validate()?;
    Ok(family)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig1Row {
    pub r: f64,
    pub lambda: f64,
    pub eps_star: f64,
    pub certifiable: bool,
}

/// `ε*` on the grid `r_grid × lambda_grid` with uniform non-prevention
/// probability. Rows are sorted by `(r, λ)`. Within one `r` the rates are
/// visited from the largest down, each search warm-started from the scaling
/// found at the previous rate; a scaling's objective can only improve as
/// `λ` decreases, so `ε*` is nondecreasing in `λ` along the sweep.
pub fn fig1_sweep(
    adjacency: &DMatrix<f64>,
    params: &SisParams,
    lambda_grid: &[f64],
    r_grid: &[f64],
) -> Result<Vec<Fig1Row>, SisError> {
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let mut rs = r_grid.to_vec();
    rs.sort_by(f64::total_cmp);
    let per_r: Vec<Vec<Fig1Row>> = rs
        .par_iter()
        .map(|&r| {
            let p = SisParams {
                r: NonPrevention::Uniform(r),
                ..params.clone()
            };
            let model = build_sis_model(adjacency, &p)?;
            let mut rows = Vec::with_capacity(lambdas.len());
            let mut warm: Vec<Vec<f64>> = Vec::new();
            for &lambda in lambdas.iter().rev() {
                let options = SearchOptions {
                    warm_starts: warm.clone(),
                    ..SearchOptions::default()
                };
                let u = min_unreliability(&model, Mode::A1, lambda, &options)?;
                if u.search.a > 0.0 {
                    warm = vec![u.search.p.clone()];
                }
                rows.push(Fig1Row {
                    r,
                    lambda,
                    eps_star: u.eps_star,
                    certifiable: u.certifiable,
                });
            }
            rows.reverse();
            Ok(rows)
        })
        .collect::<Result<_, SisError>>()?;
    Ok(per_r.into_iter().flatten().collect())
}

pub fn fig1_csv(rows: &[Fig1Row]) -> String {
    let mut out = String::from("r,lambda,eps_star\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            crate::fmt_sig(row.r),
            crate::fmt_sig(row.lambda),
            crate::fmt_sig(row.eps_star)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    /// 1-based node index.
    pub node: usize,
    pub in_degree: usize,
    pub r_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Output {
    pub rows: Vec<Fig2Row>,
    pub design: DesignResult,
}

/// Solves the protection design in free-ε mode.
pub fn fig2_run(adjacency: &DMatrix<f64>, params: &SisParams, cost_bound: f64) -> Result<Fig2Output, SisError> {
    let family = sis_design_family(adjacency, params, cost_bound)?;
    let design = solve_design(&family, DesignMode::FreeEps)?;
    let degrees = in_degrees(adjacency);
    let rows = degrees
        .iter()
        .zip(&design.r_star)
        .enumerate()
        .map(|(i, (&d, &r))| Fig2Row {
            node: i + 1,
            in_degree: d,
            r_star: r,
        })
        .collect();
    Ok(Fig2Output { rows, design })
}

pub fn fig2_csv(rows: &[Fig2Row]) -> String {
    let mut out = String::from("node,in_degree,r_star\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.node, row.in_degree, crate::fmt_sig(row.r_star)));
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut l = k;
        while l + 1 < idx.len() && v[idx[l + 1]] == v[idx[k]] {
            l += 1;
        }
        let avg = (k + l) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=l] {
            out[i] = avg;
        }
        k = l + 1;
    }
    out
}

#[cfg(test)]
mod tests;
