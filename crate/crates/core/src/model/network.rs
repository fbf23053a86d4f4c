use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::distribution::{symmetrize, FiniteMatrixDistribution};
use super::ModelError;
use crate::policy::NumericPolicy;

/// Independence structure of the random blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// All blocks `A_ij` independent.
    A1,
    /// Block-rows `A_i = [A_i1 … A_iN]` independent.
    A2,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::A1 => "a1",
            Mode::A2 => "a2",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(Mode::A1),
            "a2" => Ok(Mode::A2),
            other => Err(ModelError::Invalid(format!("unknown mode '{other}'"))),
        }
    }
}

/// Graph neighbourhoods with 0-based indices. `in_neighbors[i]` holds the
/// `j` with `(i, j)` an edge, i.e. the subsystems feeding into `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    pub in_neighbors: Vec<Vec<usize>>,
    pub out_neighbors: Vec<Vec<usize>>,
    pub in_degree: Vec<usize>,
}

/// One support entry that breaks positivity (0-based, global coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityViolation {
    pub block: (usize, usize),
    pub support_index: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl std::fmt::Display for PositivityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "block ({},{}) support point {} has entry ({},{}) = {:e}",
            self.block.0 + 1,
            self.block.1 + 1,
            self.support_index + 1,
            self.row + 1,
            self.col + 1,
            self.value
        )
    }
}

/// `Var(S_i)` stored on the block index set where it can be nonzero.
#[derive(Debug, Clone)]
pub struct RowVariance {
    /// Sorted subsystem indices whose coordinates carry `local`.
    pub blocks: Vec<usize>,
    pub n: usize,
    pub local: DMatrix<f64>,
}

impl RowVariance {
    pub fn to_dense(&self, subsystems: usize) -> DMatrix<f64> {
        let dim = self.n * subsystems;
        let mut out = DMatrix::zeros(dim, dim);
        self.add_scaled_to(&mut out, 1.0);
        out
    }

    pub fn add_scaled_to(&self, out: &mut DMatrix<f64>, scale: f64) {
        let n = self.n;
        for (a, &ba) in self.blocks.iter().enumerate() {
            for (b, &bb) in self.blocks.iter().enumerate() {
                for r in 0..n {
                    for c in 0..n {
                        out[(ba * n + r, bb * n + c)] += scale * self.local[(a * n + r, b * n + c)];
                    }
                }
            }
        }
    }
}

/// Networked system `dx/dt = A x` with random time-invariant blocks.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    subsystems: usize,
    n: usize,
    mode: Mode,
    blocks: BTreeMap<(usize, usize), FiniteMatrixDistribution>,
    rows: BTreeMap<usize, FiniteMatrixDistribution>,
}

impl NetworkModel {
    /// Independent blocks. Indices are 0-based.
    pub fn a1(
        subsystems: usize,
        n: usize,
        blocks: impl IntoIterator<Item = ((usize, usize), FiniteMatrixDistribution)>,
    ) -> Result<Self, ModelError> {
        check_dims(subsystems, n)?;
        let mut map = BTreeMap::new();
        for ((i, j), dist) in blocks {
            if i >= subsystems || j >= subsystems {
                return Err(ModelError::IndexOutOfRange { index: i.max(j), limit: subsystems });
            }
            if dist.shape() != (n, n) {
                return Err(ModelError::ShapeMismatch {
                    expected: (n, n),
                    found: dist.shape(),
                });
            }
            if map.insert((i, j), dist).is_some() {
                return Err(ModelError::Invalid(format!("block ({},{}) given twice", i + 1, j + 1)));
            }
        }
        Ok(Self {
            subsystems,
            n,
            mode: Mode::A1,
            blocks: map,
            rows: BTreeMap::new(),
        })
    }

    /// Independent block-rows, each of shape `n × nN`. Indices are 0-based.
    pub fn a2(
        subsystems: usize,
        n: usize,
        rows: impl IntoIterator<Item = (usize, FiniteMatrixDistribution)>,
    ) -> Result<Self, ModelError> {
        check_dims(subsystems, n)?;
        let mut map = BTreeMap::new();
        for (i, dist) in rows {
            if i >= subsystems {
                return Err(ModelError::IndexOutOfRange { index: i, limit: subsystems });
            }
            if dist.shape() != (n, n * subsystems) {
                return Err(ModelError::ShapeMismatch {
                    expected: (n, n * subsystems),
                    found: dist.shape(),
                });
            }
            if map.insert(i, dist).is_some() {
                return Err(ModelError::Invalid(format!("row {} given twice", i + 1)));
            }
        }
        Ok(Self {
            subsystems,
            n,
            mode: Mode::A2,
            blocks: BTreeMap::new(),
            rows: map,
        })
    }

    /// Number of subsystems `N`.
    pub fn subsystems(&self) -> usize {
        self.subsystems
    }

    /// Per-subsystem state dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Total dimension `nN`.
    pub fn dim(&self) -> usize {
        self.n * self.subsystems
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Block distributions (A1 mode; empty otherwise).
    pub fn blocks(&self) -> &BTreeMap<(usize, usize), FiniteMatrixDistribution> {
        &self.blocks
    }

    /// Row distributions (A2 mode; empty otherwise).
    pub fn rows(&self) -> &BTreeMap<usize, FiniteMatrixDistribution> {
        &self.rows
    }

    /// `E[A]` as a dense `nN × nN` matrix.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        match self.mode {
            Mode::A1 => {
                for (&(i, j), dist) in &self.blocks {
                    out.view_mut((i * n, j * n), (n, n)).copy_from(&dist.mean());
                }
            }
            Mode::A2 => {
                for (&i, dist) in &self.rows {
                    out.view_mut((i * n, 0), (n, self.dim())).copy_from(&dist.mean());
                }
            }
        }
        out
    }

    /// Directed edges `(i, j)`: block `A_ij` present and not identically zero.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let n = self.n;
        match self.mode {
            Mode::A1 => self
                .blocks
                .iter()
                .filter(|(_, d)| !d.is_zero())
                .map(|(&k, _)| k)
                .collect(),
            Mode::A2 => {
                let mut set = BTreeSet::new();
                for (&i, dist) in &self.rows {
                    for j in 0..self.subsystems {
                        let nonzero = dist
                            .support()
                            .iter()
                            .any(|(_, m)| m.view((0, j * n), (n, n)).iter().any(|&x| x != 0.0));
                        if nonzero {
                            set.insert((i, j));
                        }
                    }
                }
                set
            }
        }
    }

    pub fn neighborhoods(&self) -> Neighborhoods {
        let mut in_neighbors = vec![Vec::new(); self.subsystems];
        let mut out_neighbors = vec![Vec::new(); self.subsystems];
        for (i, j) in self.edges() {
            in_neighbors[i].push(j);
            out_neighbors[j].push(i);
        }
        let in_degree = in_neighbors.iter().map(Vec::len).collect();
        Neighborhoods {
            in_neighbors,
            out_neighbors,
            in_degree,
        }
    }

    /// Every entry of every support point that would make some realisation
    /// of `A` fail to be Metzler.
    pub fn positivity_violations(&self) -> Vec<PositivityViolation> {
        let tol = NumericPolicy::DEFAULT.metzler;
        let n = self.n;
        let mut out = Vec::new();
        let mut scan = |k: usize, m: &DMatrix<f64>, row0: usize, col0: usize| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let (gr, gc) = (row0 + r, col0 + c);
                    if gr != gc && m[(r, c)] < -tol {
                        out.push(PositivityViolation {
                            block: (gr / n, gc / n),
                            support_index: k,
                            row: gr,
                            col: gc,
                            value: m[(r, c)],
                        });
                    }
                }
            }
        };
        match self.mode {
            Mode::A1 => {
                for (&(i, j), dist) in &self.blocks {
                    for (k, (_, m)) in dist.support().iter().enumerate() {
                        scan(k, m, i * n, j * n);
                    }
                }
            }
            Mode::A2 => {
                for (&i, dist) in &self.rows {
                    for (k, (_, m)) in dist.support().iter().enumerate() {
                        scan(k, m, i * n, 0);
                    }
                }
            }
        }
        out
    }

    /// True iff every realisation of `A` is Metzler.
    pub fn check_positivity(&self) -> bool {
        self.positivity_violations().is_empty()
    }

    /// Product of support sizes over all blocks (A1) or rows (A2),
    /// saturating at `u128::MAX`.
    pub fn joint_support_size(&self) -> u128 {
        let sizes: Vec<usize> = match self.mode {
            Mode::A1 => self.blocks.values().map(|d| d.support().len()).collect(),
            Mode::A2 => self.rows.values().map(|d| d.support().len()).collect(),
        };
        sizes.into_iter().fold(1u128, |acc, s| acc.saturating_mul(s as u128))
    }

    /// Distribution of the block-row `A_i` (shape `n × nN`). In A1 mode the
    /// product of the row's independent blocks is enumerated, refusing more
    /// than `cap` joint support points.
    pub fn row_distribution(&self, i: usize, cap: usize) -> Result<FiniteMatrixDistribution, ModelError> {
        if i >= self.subsystems {
            return Err(ModelError::IndexOutOfRange { index: i, limit: self.subsystems });
        }
        let (n, dim) = (self.n, self.dim());
        match self.mode {
            Mode::A2 => Ok(self
                .rows
                .get(&i)
                .cloned()
                .unwrap_or_else(|| FiniteMatrixDistribution::deterministic(DMatrix::zeros(n, dim)))),
            Mode::A1 => {
                let row: Vec<(usize, &FiniteMatrixDistribution)> = self
                    .blocks
                    .range((i, 0)..(i + 1, 0))
                    .map(|(&(_, j), d)| (j, d))
                    .collect();
                let size = row
                    .iter()
                    .fold(1u128, |acc, (_, d)| acc.saturating_mul(d.support().len() as u128));
                if size > cap as u128 {
                    return Err(ModelError::SupportOverflow { size, cap });
                }
                let mut points = vec![(1.0, DMatrix::zeros(n, dim))];
                for (j, dist) in row {
                    let mut next = Vec::with_capacity(points.len() * dist.support().len());
                    for (w, base) in &points {
                        for (wk, mk) in dist.support() {
                            let mut m: DMatrix<f64> = base.clone();
                            m.view_mut((0, j * n), (n, n)).copy_from(mk);
                            next.push((w * wk, m));
                        }
                    }
                    points = next;
                }
                let total: f64 = points.iter().map(|(w, _)| w).sum();
                for p in &mut points {
                    p.0 /= total;
                }
                FiniteMatrixDistribution::new(points)
            }
        }
    }

    /// The same random system described by independent block-rows.
    pub fn to_a2(&self, cap: usize) -> Result<NetworkModel, ModelError> {
        if self.mode == Mode::A2 {
            return Ok(self.clone());
        }
        let rows: BTreeSet<usize> = self.blocks.keys().map(|&(i, _)| i).collect();
        let mut out = Vec::with_capacity(rows.len());
        for i in rows {
            out.push((i, self.row_distribution(i, cap)?));
        }
        NetworkModel::a2(self.subsystems, self.n, out)
    }

    /// `Var(S_i)` for `S_i = e_iᵀ ⊗ A_iᵀ + e_i ⊗ A_i`, compressed to the
    /// blocks `{i} ∪ 𝒩⁻[i]` outside of which it vanishes.
    pub fn row_var_s(&self, i: usize) -> Result<RowVariance, ModelError> {
        let dist = self.row_distribution(i, NumericPolicy::DEFAULT.support_cap)?;
        let n = self.n;
        let mut blocks: BTreeSet<usize> = self
            .edges()
            .into_iter()
            .filter(|&(r, _)| r == i)
            .map(|(_, j)| j)
            .collect();
        blocks.insert(i);
        let blocks: Vec<usize> = blocks.into_iter().collect();
        let k = blocks.len();
        let li = blocks.iter().position(|&b| b == i).expect("row index in block set");

        let mut local = DMatrix::zeros(k * n, k * n);
        if dist.is_deterministic() {
            return Ok(RowVariance { blocks, n, local });
        }
        let mean = dist.mean();
        for (w, m) in dist.support() {
            let d = m - &mean;
            let mut s = DMatrix::zeros(k * n, k * n);
            for (b, &j) in blocks.iter().enumerate() {
                let dij = d.view((0, j * n), (n, n));
                let mut row_block = s.view_mut((li * n, b * n), (n, n));
                row_block += dij;
                let mut col_block = s.view_mut((b * n, li * n), (n, n));
                col_block += dij.transpose();
            }
            local += &s * &s * *w;
        }
        Ok(RowVariance {
            blocks,
            n,
            local: symmetrize(local),
        })
    }
}

fn check_dims(subsystems: usize, n: usize) -> Result<(), ModelError> {
    if subsystems == 0 || n == 0 {
        return Err(ModelError::Invalid(format!(
            "dimensions must be positive (N = {subsystems}, n = {n})"
        )));
    }
    Ok(())
}
