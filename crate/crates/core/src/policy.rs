//! Numeric policy shared by every module.
//!
//! All thresholds that decide a verdict (symmetry, definiteness, strictness
//! margins, support caps) live here so that a single record documents what
//! "equal", "positive" and "feasible" mean numerically.

/// Tolerance record. `NumericPolicy::DEFAULT` is used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// Allowed deviation of a distribution's total weight from one.
    pub weight_sum: f64,
    /// Maximum asymmetry `‖M − Mᵀ‖_max` accepted by [`crate::linalg::SymMatrix`],
    /// relative to `max(1, ‖M‖_max)`.
    pub symmetry: f64,
    /// Negative eigenvalues above `−psd·‖M‖` are treated as zero.
    pub psd: f64,
    /// Eigenvalues below `rank·λ_max` do not count towards the rank.
    pub rank: f64,
    /// Absolute eigenvalue accuracy target, relative to `max(1, ‖M‖)`.
    pub eig: f64,
    /// Off-diagonal entries above `−metzler` are accepted as nonnegative.
    pub metzler: f64,
    /// Margin by which strict inequalities must hold.
    pub strict_margin: f64,
    /// Relative slack allowed on non-strict scalar comparisons so that
    /// verdicts do not depend on rounding of homogeneous quantities.
    pub relative_slack: f64,
    /// Cap on enumerated joint support sizes.
    pub support_cap: usize,
    /// Smallest reported unreliability level.
    pub eps_floor: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        weight_sum: 1e-12,
        symmetry: 1e-10,
        psd: 1e-10,
        rank: 1e-12,
        eig: 1e-9,
        metzler: 1e-12,
        strict_margin: 1e-9,
        relative_slack: 1e-10,
        support_cap: 1_000_000,
        eps_floor: 1e-300,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}
