//! Associative memory: least-squares slot addressing, low-rank memory
//! writes, ridge-shrunk readouts and the readout scaling intervention.
//!
//! Matrices are row-major in the sense of the math: the memory `M` is
//! `K x C` (one slot per row), an address `w` is a `1 x K` row, an episode
//! `Z` is `N x C`.
//!
//! All solves go through [`ridge_solve`], which works on whichever Gram
//! matrix (`K x K` or `C x C`) is smaller. With `lambda > 0` that Gram
//! matrix is shifted and Cholesky-factored; with `lambda == 0` its
//! eigendecomposition gives the minimum-norm (pseudo-inverse) solution.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{stack_rows, LatentVector};
use crate::seed;

/// Whether one pair or a whole entry occupies memory during a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryScope {
    #[default]
    PerPair,
    PerEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// Slot count `K`.
    pub slots: usize,
    /// Latent dimension `C`.
    pub latent_dim: usize,
    /// Ridge coefficient of the read-side addressing solve.
    pub lambda: f64,
    /// Ridge coefficient used when addressing the prior during a write.
    /// `None` reuses `lambda`.
    pub write_lambda: Option<f64>,
    /// Per-element standard deviation of the write noise.
    pub sigma_w: f64,
    pub seed: u64,
    pub scope: MemoryScope,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            slots: 128,
            latent_dim: 64,
            lambda: DEFAULT_LAMBDA,
            write_lambda: Some(0.0),
            sigma_w: 0.05,
            seed: 0,
            scope: MemoryScope::PerPair,
        }
    }
}

/// Read-side ridge coefficient shipped with the desk-scale defaults.
pub const DEFAULT_LAMBDA: f64 = 0.73;

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "memory dimensions must be positive (K = {}, C = {})",
                self.slots, self.latent_dim
            )));
        }
        let write_lambda = self.effective_write_lambda();
        if !(self.lambda >= 0.0 && write_lambda >= 0.0 && self.sigma_w >= 0.0)
            || !self.lambda.is_finite()
            || !write_lambda.is_finite()
            || !self.sigma_w.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "lambda, write_lambda and sigma_w must be finite and non-negative \
                 (got {}, {}, {})",
                self.lambda, write_lambda, self.sigma_w
            )));
        }
        Ok(())
    }

    pub fn effective_write_lambda(&self) -> f64 {
        self.write_lambda.unwrap_or(self.lambda)
    }
}

/// `X = argmin ||X * basis - rhs||^2 + lambda * ||X||^2`, with the
/// minimum-norm least-squares solution at `lambda == 0`.
///
/// `rhs` is `R x C`, `basis` is `K x C`, the result is `R x K`.
pub fn ridge_solve(rhs: &DMatrix<f64>, basis: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let (k, c) = basis.shape();
    if rhs.ncols() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            actual: rhs.ncols(),
        });
    }
    if k <= c {
        // X = rhs B^T (B B^T + lambda I_K)^-1
        let gram = basis * basis.transpose();
        let projected = rhs * basis.transpose();
        Ok(right_solve_gram(projected, gram, lambda))
    } else {
        // X = rhs (B^T B + lambda I_C)^-1 B^T
        let gram = basis.transpose() * basis;
        Ok(right_solve_gram(rhs.clone(), gram, lambda) * basis.transpose())
    }
}

/// `Y * (G + lambda I)^-1` for a symmetric positive semi-definite `G`,
/// using the pseudo-inverse when the shifted matrix is singular.
fn right_solve_gram(y: DMatrix<f64>, mut gram: DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = gram.nrows();
    if lambda > 0.0 {
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(gram.clone()) {
            // (G Y^T = ...)^T, G symmetric.
            return chol.solve(&y.transpose()).transpose();
        }
    }
    y * gram_pinv(gram)
}

fn gram_pinv(gram: DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * n.max(1) as f64 * 1e-13;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| if v > tol { 1.0 / v } else { 0.0 })
        .collect();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| v[(i, j)] * inv[j]);
    scaled * v.transpose()
}

/// Minimum-norm least-squares solution of `A X = B`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    Ok(ridge_solve(&b.transpose(), &a.transpose(), 0.0)?.transpose())
}

/// Slot coordinates of `z` with respect to `memory`.
pub fn address(z: &LatentVector, memory: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    z.check_dim(memory.ncols())?;
    let w = ridge_solve(&DMatrix::from_row_slice(1, z.dim(), z.as_slice()), memory, lambda)?;
    Ok(w.iter().copied().collect())
}

/// Memory contents plus the fixed prior it was derived from. Every
/// operation returns a new state; the prior is shared between lineages.
#[derive(Debug, Clone)]
pub struct MemoryState {
    config: MemoryConfig,
    prior: Arc<DMatrix<f64>>,
    /// `ridge_solve(I_C, M0, write_lambda)`: the write address of an
    /// episode `Z` is `Z * write_map`, since the solve is linear in its
    /// right-hand side.
    write_map: Arc<DMatrix<f64>>,
    memory: Arc<DMatrix<f64>>,
    written: bool,
}

/// Result of a memory read.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub z: LatentVector,
    pub address: Vec<f64>,
    /// The memory had not been written since init/reset.
    pub fresh: bool,
}

impl MemoryState {
    /// `M = M0`, entries `N(0, 1/K)` seeded from `config.seed`.
    pub fn init(config: &MemoryConfig) -> Result<Self> {
        config.validate()?;
        let (k, c) = (config.slots, config.latent_dim);
        let mut rng = seed::rng(config.seed, "memory-prior");
        let scale = 1.0 / (k as f64).sqrt();
        let prior = DMatrix::from_fn(k, c, |_, _| {
            let g: f64 = rng.sample(StandardNormal);
            g * scale
        });
        let write_map = ridge_solve(&DMatrix::identity(c, c), &prior, config.effective_write_lambda())?;
        let prior = Arc::new(prior);
        Ok(MemoryState {
            config: config.clone(),
            memory: Arc::clone(&prior),
            prior,
            write_map: Arc::new(write_map),
            written: false,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn memory(&self) -> &DMatrix<f64> {
        &self.memory
    }

    pub fn prior(&self) -> &DMatrix<f64> {
        &self.prior
    }

    pub fn is_written(&self) -> bool {
        self.written
    }

    /// Writes an episode of `N >= 1` encodings. Noise for this write is
    /// drawn from the stream tagged `noise_tag`.
    pub fn write_episode(&self, episode: &[LatentVector], noise_tag: &str) -> Result<Self> {
        if episode.is_empty() {
            return Err(Error::Empty("write episode"));
        }
        let c = self.config.latent_dim;
        let mut z = stack_rows(episode, c)?;
        if self.config.sigma_w > 0.0 {
            let mut rng = seed::rng(self.config.seed, &format!("write-noise/{noise_tag}"));
            let sigma = self.config.sigma_w;
            for v in z.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v += sigma * g;
            }
        }
        let w = &z * &*self.write_map;
        let memory = min_norm_solve(&w, &z)?;
        Ok(MemoryState {
            config: self.config.clone(),
            prior: Arc::clone(&self.prior),
            write_map: Arc::clone(&self.write_map),
            memory: Arc::new(memory),
            written: true,
        })
    }

    /// `w = address(z_q, M, lambda)`, `z_readout = w M`.
    pub fn read(&self, query: &LatentVector) -> Result<Readout> {
        let address = address(query, &self.memory, self.config.lambda)?;
        let k = self.config.slots;
        let w = DMatrix::from_row_slice(1, k, &address);
        let z = &w * &*self.memory;
        Ok(Readout {
            z: LatentVector(z.iter().copied().collect()),
            address,
            fresh: !self.written,
        })
    }

    /// `M := M0`.
    pub fn reset(&self) -> Self {
        MemoryState {
            config: self.config.clone(),
            prior: Arc::clone(&self.prior),
            write_map: Arc::clone(&self.write_map),
            memory: Arc::clone(&self.prior),
            written: false,
        }
    }
}

/// `s * z`; `s` must be positive.
pub fn scale_readout(z: &LatentVector, s: f64) -> Result<LatentVector> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "scaling factor must be positive and finite, got {s}"
        )));
    }
    Ok(z.scaled(s))
}

/// Latents recorded for one processed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRecord {
    pub entry_id: String,
    pub j: usize,
    pub s: f64,
    pub z_write: LatentVector,
    pub z_readout: LatentVector,
    pub z_readout_scaled: LatentVector,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub address: Vec<f64>,
    /// Encoding of the generated output sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_generate: Option<LatentVector>,
    /// Encoding of the pair's input sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_input: Option<LatentVector>,
    #[serde(default)]
    pub fresh_memory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEstimate {
    /// Mean of `||z_write|| / ||z_readout||`.
    pub scale: f64,
    pub used: usize,
    /// Records skipped because `||z_readout|| < 1e-12`.
    pub skipped: usize,
}

pub const DEGENERATE_NORM: f64 = 1e-12;

pub fn estimate_scale(records: &[ReadoutRecord]) -> Result<ScaleEstimate> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for r in records {
        let readout = r.z_readout.norm();
        if readout < DEGENERATE_NORM {
            continue;
        }
        sum += r.z_write.norm() / readout;
        used += 1;
    }
    let skipped = records.len() - used;
    if used == 0 {
        return Err(Error::DegenerateRecords(records.len()));
    }
    if skipped > 0 {
        log::warn!("estimate_scale: skipped {skipped} records with zero readout");
    }
    Ok(ScaleEstimate {
        scale: sum / used as f64,
        used,
        skipped,
    })
}
