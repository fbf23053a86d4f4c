use nalgebra::DMatrix;

use super::ModelError;
use crate::linalg::{spectral_norm, LinalgError};
use crate::policy::NumericPolicy;

/// Which side the Gram product is taken on in [`FiniteMatrixDistribution::w`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `W(M) = E[MᵀM] − E[M]ᵀE[M]`.
    Normal,
    /// `W(Mᵀ) = E[MMᵀ] − E[M]E[M]ᵀ`.
    Transposed,
}

/// Probability distribution over real matrices with finitely many support
/// points. Identical support matrices are merged at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMatrixDistribution {
    support: Vec<(f64, DMatrix<f64>)>,
    rows: usize,
    cols: usize,
}

/// Exact moments of one block.
#[derive(Debug, Clone)]
pub struct MomentData {
    pub mean: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub wt: DMatrix<f64>,
    pub esssup_dev: f64,
}

impl FiniteMatrixDistribution {
    pub fn new(support: Vec<(f64, DMatrix<f64>)>) -> Result<Self, ModelError> {
        let Some((_, first)) = support.first() else {
            return Err(ModelError::EmptySupport);
        };
        let (rows, cols) = first.shape();
        let mut total = 0.0;
        for (k, (w, m)) in support.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0 && *w <= 1.0 + NumericPolicy::DEFAULT.weight_sum) {
                return Err(ModelError::BadWeight { index: k, weight: *w });
            }
            if m.shape() != (rows, cols) {
                return Err(ModelError::ShapeMismatch {
                    expected: (rows, cols),
                    found: m.shape(),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Linalg(LinalgError::NonFinite));
            }
            total += w;
        }
        if (total - 1.0).abs() > NumericPolicy::DEFAULT.weight_sum {
            return Err(ModelError::WeightSum { sum: total });
        }

        let mut merged: Vec<(f64, DMatrix<f64>)> = Vec::with_capacity(support.len());
        for (w, m) in support {
            match merged.iter_mut().find(|(_, q)| *q == m) {
                Some(entry) => entry.0 += w,
                None => merged.push((w, m)),
            }
        }
        Ok(Self {
            support: merged,
            rows,
            cols,
        })
    }

    /// Point mass at `m`.
    pub fn deterministic(m: DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        Self {
            support: vec![(1.0, m)],
            rows,
            cols,
        }
    }

    /// Two-point distribution taking `hi` with probability `r` and `lo`
    /// otherwise. Points with zero probability are left out.
    pub fn two_point(r: f64, hi: DMatrix<f64>, lo: DMatrix<f64>) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&r) {
            return Err(ModelError::BadWeight { index: 0, weight: r });
        }
        let support: Vec<_> = [(r, hi), (1.0 - r, lo)]
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .collect();
        Self::new(support)
    }

    pub fn support(&self) -> &[(f64, DMatrix<f64>)] {
        &self.support
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_deterministic(&self) -> bool {
        self.support.len() == 1
    }

    /// True when every support matrix is zero.
    pub fn is_zero(&self) -> bool {
        self.support.iter().all(|(_, m)| m.iter().all(|&x| x == 0.0))
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for (w, m) in &self.support {
            acc += m * *w;
        }
        acc
    }

    fn deviations(&self) -> impl Iterator<Item = (f64, DMatrix<f64>)> + '_ {
        let mean = self.mean();
        self.support.iter().map(move |(w, m)| (*w, m - &mean))
    }

    /// `W(A)` or `W(Aᵀ)`, accumulated in centred form so that no
    /// cancellation between the two moment terms occurs.
    pub fn w(&self, side: Side) -> DMatrix<f64> {
        let size = match side {
            Side::Normal => self.cols,
            Side::Transposed => self.rows,
        };
        let mut acc = DMatrix::zeros(size, size);
        if self.is_deterministic() {
            return acc;
        }
        for (w, d) in self.deviations() {
            match side {
                Side::Normal => acc += d.transpose() * &d * w,
                Side::Transposed => acc += &d * d.transpose() * w,
            }
        }
        symmetrize(acc)
    }

    /// `esssup ‖A − E[A]‖` in the spectral norm.
    pub fn esssup_dev(&self) -> Result<f64, ModelError> {
        if self.is_deterministic() {
            return Ok(0.0);
        }
        let mut best: f64 = 0.0;
        for (_, d) in self.deviations() {
            best = best.max(spectral_norm(&d)?);
        }
        Ok(best)
    }

    /// `esssup ‖D + Dᵀ‖` with `D = A − E[A]`; square support only.
    pub fn esssup_sym_dev(&self) -> Result<f64, ModelError> {
        self.require_square()?;
        if self.is_deterministic() {
            return Ok(0.0);
        }
        let mut best: f64 = 0.0;
        for (_, d) in self.deviations() {
            best = best.max(spectral_norm(&(&d + d.transpose()))?);
        }
        Ok(best)
    }

    /// `E[(D + Dᵀ)²]` with `D = A − E[A]`; square support only.
    pub fn sym_variance(&self) -> Result<DMatrix<f64>, ModelError> {
        self.require_square()?;
        let mut acc = DMatrix::zeros(self.rows, self.rows);
        if self.is_deterministic() {
            return Ok(acc);
        }
        for (w, d) in self.deviations() {
            let s = &d + d.transpose();
            acc += &s * &s * w;
        }
        Ok(symmetrize(acc))
    }

    pub fn moments(&self) -> Result<MomentData, ModelError> {
        Ok(MomentData {
            mean: self.mean(),
            w: self.w(Side::Normal),
            wt: self.w(Side::Transposed),
            esssup_dev: self.esssup_dev()?,
        })
    }

    fn require_square(&self) -> Result<(), ModelError> {
        if self.rows != self.cols {
            return Err(ModelError::ShapeMismatch {
                expected: (self.rows, self.rows),
                found: (self.rows, self.cols),
            });
        }
        Ok(())
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
