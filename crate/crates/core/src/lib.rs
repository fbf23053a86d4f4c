//! Probabilistic stability certificates and distribution design for
//! networks of positive linear systems with random coefficients.

pub mod bernstein;
pub mod certify;
pub mod design;
pub mod error;
pub mod gpsolve;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod policy;
pub mod sis;

pub use error::Error;

/// Decimal rendering with 12 significant digits, used for CSV output.
pub(crate) fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        format!("{:.*}", (11 - exp).max(0) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}
