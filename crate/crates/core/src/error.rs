//! Crate-wide error type for callers that drive several modules.

use thiserror::Error;

use crate::bernstein::BernsteinError;
use crate::certify::CertifyError;
use crate::design::DesignError;
use crate::gpsolve::GpError;
use crate::linalg::LinalgError;
use crate::model::ModelError;
use crate::montecarlo::McError;
use crate::sis::SisError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Bernstein(#[from] BernsteinError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Sis(#[from] SisError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
}

impl Error {
    /// Name of the module that raised the error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Model(_) => "model",
            Error::Linalg(_) => "linalg",
            Error::Bernstein(_) => "bernstein",
            Error::Certify(_) => "certify",
            Error::Gp(_) => "gpsolve",
            Error::Design(_) => "design",
            Error::Sis(_) => "sis",
            Error::MonteCarlo(_) => "montecarlo",
        }
    }
}
