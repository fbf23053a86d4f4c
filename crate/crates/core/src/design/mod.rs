//! Distribution design by geometric programming: parametrised families,
//! the design programs for both independence structures, and solving with
//! post-verification against the exact certificate.

mod build;
mod family;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{CertResult, CertifyError};
use crate::gpsolve::{GpError, GpStatus};
use crate::model::ModelError;

pub use build::{build_design_gp, build_design_gp_a1, build_design_gp_a2, DesignVars, GP_STRICT_MARGIN};
pub use family::{
    AffineExpr, BlockMatrixSurrogate, BlockSurrogate, DesignFamily, DesignParam, FamilyPoint, FamilyUnit, PosyEntry,
    Realization, RowMatrixSurrogate, RowSurrogate, Surrogates,
};
pub use solve::{check_surrogates, solve_design, solve_design_with};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("no design meets cost/constraints at any rate")]
    Infeasible,
    #[error("design program not solved: solver status {0}")]
    Solver(GpStatus),
    #[error("surrogate bounds violated at r*: {0}")]
    SurrogateViolated(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// How the unreliability level enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "eps")]
pub enum DesignMode {
    /// `ρ` is a variable with `ρ ≥ log(nN)`, i.e. `ε ≤ 1`.
    FreeEps,
    /// `ρ = log(nN/ε)` is pinned.
    FixedEps(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub params: Vec<String>,
    pub r_star: Vec<f64>,
    pub lambda_star: f64,
    pub rho_star: f64,
    /// `nN·exp(−ρ*)`.
    pub eps_star: f64,
    pub p_star: Vec<f64>,
    pub a: f64,
    pub delta: f64,
    pub sigma: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub gp_status: GpStatus,
    pub cost: f64,
    /// Result of re-checking the certificate on the realised model.
    pub verification: CertResult,
}

impl DesignResult {
    /// CSV with columns `param,r_star`.
    pub fn r_star_csv(&self) -> String {
        let mut out = String::from("param,r_star\n");
        for (name, r) in self.params.iter().zip(&self.r_star) {
            out.push_str(&format!("{name},{}\n", crate::fmt_sig(*r)));
        }
        out
    }
}
