//! Per-layer ZCA whitening fit on training features.

use serde::{Deserialize, Serialize};

use crate::embedder::LayerId;
use crate::error::{Error, Result};
use crate::linalg::{mean_and_covariance, symmetric_spectral_map, Matrix};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Norms at or below this are treated as zero by [`l2_normalize`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// `x ↦ (x − mean)·W` with `W = (C + εI)^(−1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub layer_id: LayerId,
    pub mean: Vec<f64>,
    pub w_matrix: Matrix,
    pub epsilon: f64,
    /// Set when the fit had no more samples than dimensions, so the
    /// covariance was singular and only the ε ridge kept `W` finite.
    pub rank_deficient: bool,
}

/// Fits the symmetric inverse square root of the regularized sample
/// covariance (1/(n−1) normalization) via a symmetric eigendecomposition.
/// Negative round-off eigenvalues are clamped to zero before adding ε.
pub fn fit_whitening(layer_id: LayerId, train: &Matrix, epsilon: f64) -> Result<WhiteningTransform> {
    if train.nrows() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: train.nrows(),
        });
    }
    if !train.is_finite() {
        return Err(Error::NonFinite("whitening input"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let (mean, cov) = mean_and_covariance(train)?;
    let rank_deficient = train.nrows() <= train.ncols();
    if rank_deficient {
        log::debug!(
            "layer {layer_id}: {} samples for {} dims, covariance is singular; relying on epsilon ridge",
            train.nrows(),
            train.ncols()
        );
    }
    let w_matrix = symmetric_spectral_map(&cov, |l| (l + epsilon).powf(-0.5));
    Ok(WhiteningTransform {
        layer_id,
        mean,
        w_matrix,
        epsilon,
        rank_deficient,
    })
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        // row vector times matrix: out_j = Σ_i (x_i − μ_i) W_ij
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let z = xi - mi;
            if z == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.w_matrix.row(i)) {
                *o += z * w;
            }
        }
        Ok(out)
    }

    /// Whitens every row of `x`.
    pub fn apply_rows(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut out = Matrix::zeros(x.nrows(), x.ncols());
        for i in 0..x.nrows() {
            let w = self.apply(x.row(i))?;
            out.row_mut(i).copy_from_slice(&w);
        }
        Ok(out)
    }
}

pub fn apply_whitening(t: &WhiteningTransform, x: &[f64]) -> Result<Vec<f64>> {
    t.apply(x)
}

/// Result of [`l2_normalize`]; `degenerate` marks a zero-norm input that was
/// mapped to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

pub fn l2_normalize(x: &[f64]) -> Normalized {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > DEGENERATE_NORM {
        Normalized {
            vector: x.iter().map(|v| v / norm).collect(),
            degenerate: false,
        }
    } else {
        Normalized {
            vector: vec![0.0; x.len()],
            degenerate: true,
        }
    }
}

/// Whitens then ℓ2-normalizes every row. Returns the matrix and a per-row
/// degenerate flag.
pub fn whiten_and_normalize(t: &WhiteningTransform, x: &Matrix) -> Result<(Matrix, Vec<bool>)> {
    let mut w = t.apply_rows(x)?;
    let mut flags = Vec::with_capacity(w.nrows());
    for i in 0..w.nrows() {
        let n = l2_normalize(w.row(i));
        w.row_mut(i).copy_from_slice(&n.vector);
        flags.push(n.degenerate);
    }
    Ok((w, flags))
}

/// Serializable form for diagnostics dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhiteningSummary {
    pub layer_id: LayerId,
    pub dim: usize,
    pub epsilon: f64,
    pub rank_deficient: bool,
}

impl From<&WhiteningTransform> for WhiteningSummary {
    fn from(t: &WhiteningTransform) -> Self {
        Self {
            layer_id: t.layer_id,
            dim: t.dim(),
            epsilon: t.epsilon,
            rank_deficient: t.rank_deficient,
        }
    }
}
