//! JSON model files. Matrices are row-major nested arrays and subsystem
//! indices are 1-based.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FiniteMatrixDistribution, Mode, ModelError, NetworkModel};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "N")]
    subsystems: usize,
    n: usize,
    mode: Mode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    blocks: Vec<BlockEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rows: Vec<RowEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    i: usize,
    j: usize,
    support: Vec<SupportPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowEntry {
    i: usize,
    support: Vec<SupportPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SupportPoint {
    w: f64,
    m: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(ModelError::Invalid("empty matrix in support".into()));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(ModelError::Invalid("ragged matrix in support".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn dist_from_points(points: &[SupportPoint]) -> Result<FiniteMatrixDistribution, ModelError> {
    let support = points
        .iter()
        .map(|p| Ok((p.w, matrix_from_rows(&p.m)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    FiniteMatrixDistribution::new(support)
}

fn dist_to_points(dist: &FiniteMatrixDistribution) -> Vec<SupportPoint> {
    dist.support()
        .iter()
        .map(|(w, m)| SupportPoint {
            w: *w,
            m: matrix_to_rows(m),
        })
        .collect()
}

fn to_zero_based(index: usize, limit: usize) -> Result<usize, ModelError> {
    if index == 0 || index > limit {
        return Err(ModelError::IndexOutOfRange { index, limit });
    }
    Ok(index - 1)
}

impl NetworkModel {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let big_n = file.subsystems;
        match file.mode {
            Mode::A1 => {
                if !file.rows.is_empty() {
                    return Err(ModelError::Invalid("a1 model must not contain \"rows\"".into()));
                }
                let blocks = file
                    .blocks
                    .iter()
                    .map(|b| {
                        Ok((
                            (to_zero_based(b.i, big_n)?, to_zero_based(b.j, big_n)?),
                            dist_from_points(&b.support)?,
                        ))
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?;
                NetworkModel::a1(big_n, file.n, blocks)
            }
            Mode::A2 => {
                if !file.blocks.is_empty() {
                    return Err(ModelError::Invalid("a2 model must not contain \"blocks\"".into()));
                }
                let rows = file
                    .rows
                    .iter()
                    .map(|r| Ok((to_zero_based(r.i, big_n)?, dist_from_points(&r.support)?)))
                    .collect::<Result<Vec<_>, ModelError>>()?;
                NetworkModel::a2(big_n, file.n, rows)
            }
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            subsystems: self.subsystems(),
            n: self.state_dim(),
            mode: self.mode(),
            blocks: self
                .blocks()
                .iter()
                .map(|(&(i, j), d)| BlockEntry {
                    i: i + 1,
                    j: j + 1,
                    support: dist_to_points(d),
                })
                .collect(),
            rows: self
                .rows()
                .iter()
                .map(|(&i, d)| RowEntry {
                    i: i + 1,
                    support: dist_to_points(d),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string())
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }
}
