use std::ops::Index;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C`-dimensional latent vector: the currency passed between encoder,
/// memory and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &LatentVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &LatentVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    pub fn scaled(&self, s: f64) -> LatentVector {
        LatentVector(self.0.iter().map(|v| v * s).collect())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    pub fn to_row(&self) -> RowDVector<f64> {
        RowDVector::from_row_slice(&self.0)
    }

    pub fn from_row(row: nalgebra::DMatrixView<'_, f64>) -> Self {
        LatentVector(row.iter().copied().collect())
    }
}

impl Index<usize> for LatentVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for LatentVector {
    fn from(v: Vec<f64>) -> Self {
        LatentVector(v)
    }
}

/// Stacks vectors as the rows of an `N x C` matrix.
pub fn stack_rows(rows: &[LatentVector], dim: usize) -> Result<DMatrix<f64>> {
    for r in rows {
        r.check_dim(dim)?;
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0[j]))
}
