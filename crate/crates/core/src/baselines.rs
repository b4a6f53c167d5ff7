//! Set-level fidelity and diversity baselines over generic features.
//!
//! None of these can see individual copies; under duplicate injection the
//! fidelity scores improve as leakage grows.

use crate::error::{Error, Result};
use crate::linalg::{dot, mean_and_covariance, symmetric_eigenvalues, symmetric_spectral_map, Matrix};
use crate::whiten::l2_normalize;

/// Mean and unbiased covariance of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl GaussianSummary {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFinite("baseline features"));
        }
        let (mean, covariance) = mean_and_covariance(x)?;
        Ok(Self { mean, covariance })
    }
}

/// Fréchet distance between Gaussians fit to `a` and `b`:
/// `‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½)`.
///
/// The trace of `(ΣaΣb)^½` is taken as the sum of square roots of the
/// eigenvalues of the symmetric `Σa^½ Σb Σa^½`, which has the same spectrum.
pub fn frechet_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let ga = GaussianSummary::fit(a)?;
    let gb = GaussianSummary::fit(b)?;
    Ok(frechet_from_summaries(&ga, &gb))
}

pub fn frechet_from_summaries(a: &GaussianSummary, b: &GaussianSummary) -> f64 {
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let trace = |m: &Matrix| (0..m.nrows()).map(|i| m[(i, i)]).sum::<f64>();

    let sqrt_a = symmetric_spectral_map(&a.covariance, f64::sqrt);
    let mut inner = sqrt_a
        .matmul(&b.covariance)
        .and_then(|m| m.matmul(&sqrt_a))
        .expect("covariances share a dimension");
    let n = inner.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inner[(i, j)] + inner[(j, i)]);
            inner[(i, j)] = v;
            inner[(j, i)] = v;
        }
    }
    let cross: f64 = symmetric_eigenvalues(&inner).iter().map(|l| l.max(0.0).sqrt()).sum();
    (mean_term + trace(&a.covariance) + trace(&b.covariance) - 2.0 * cross).max(0.0)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows of `a` and `b`,
/// floored at 1e-12.
pub fn median_heuristic(a: &Matrix, b: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1e-12;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    median.max(1e-12)
}

/// Biased (V-statistic) squared MMD with an RBF kernel
/// `exp(−‖x−y‖²/(2h²))`. `bandwidth = None` uses [`median_heuristic`].
pub fn mmd_rbf(a: &Matrix, b: &Matrix, bandwidth: Option<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("MMD sample"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("MMD features"));
    }
    let h = bandwidth.unwrap_or_else(|| median_heuristic(a, b)).max(1e-12);
    let denom = 2.0 * h * h;
    let mean_k = |x: &Matrix, y: &Matrix| {
        let mut acc = 0.0;
        for xr in x.rows() {
            for yr in y.rows() {
                acc += (-sq_dist(xr, yr) / denom).exp();
            }
        }
        acc / (x.nrows() * y.nrows()) as f64
    };
    Ok(mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b))
}

/// Exponentiated Shannon entropy of the spectrum of `K/n`, with `K` the
/// cosine Gram matrix of the rows.
pub fn vendi_score(feats: &Matrix) -> Result<f64> {
    let n = feats.nrows();
    if n == 0 {
        return Err(Error::Empty("Vendi sample"));
    }
    if !feats.is_finite() {
        return Err(Error::NonFinite("Vendi features"));
    }
    let mut rows = Vec::with_capacity(n);
    for r in feats.rows() {
        let nv = l2_normalize(r);
        if nv.degenerate {
            return Err(Error::Undefined("cosine kernel of a zero feature row"));
        }
        rows.push(nv.vector);
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(&rows[i], &rows[j]) / n as f64;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let entropy: f64 = symmetric_eigenvalues(&k)
        .into_iter()
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum();
    Ok(entropy.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Matrix {
        let data = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, c, data).unwrap()
    }

    #[test]
    fn frechet_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 40, 5);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn frechet_scalar_closed_forms() {
        // mean 0 vs 1, sample variance 1 each
        let a = col(&[-1.0, 0.0, 1.0]);
        let b = col(&[0.0, 1.0, 2.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        // equal means, variances 1 vs 4 → (1 − 2)²
        let b = col(&[-2.0, 0.0, 2.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 30, 4);
        let b = random(&mut rng, 25, 4);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-6);
    }

    #[test]
    fn frechet_rejects_nan_and_tiny() {
        let a = col(&[0.0, f64::NAN]);
        assert!(frechet_distance(&a, &col(&[0.0, 1.0])).is_err());
        assert!(frechet_distance(&col(&[0.0]), &col(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn mmd_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 20, 3);
        assert!(mmd_rbf(&a, &a, None).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn mmd_two_point_masses() {
        let a = Matrix::from_rows(&[[0.0, 0.0]], 2).unwrap();
        let b = Matrix::from_rows(&[[3.0, 4.0]], 2).unwrap();
        // one pooled pair, so h = d = 5
        let expected = 2.0 * (1.0 - (-25.0f64 / (2.0 * 25.0)).exp());
        assert!((mmd_rbf(&a, &b, None).unwrap() - expected).abs() < 1e-12);
        let fixed = 2.0 * (1.0 - (-25.0f64 / 2.0).exp());
        assert!((mmd_rbf(&a, &b, Some(1.0)).unwrap() - fixed).abs() < 1e-12);
    }

    #[test]
    fn mmd_shrinks_as_b_approaches_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 30, 3);
        let shift = random(&mut rng, 30, 3);
        let mut last = f64::INFINITY;
        for t in [1.0, 0.75, 0.5, 0.25, 0.0] {
            let b_data: Vec<f64> = a
                .as_slice()
                .iter()
                .zip(shift.as_slice())
                .map(|(x, s)| x + t * (2.0 + s))
                .collect();
            let b = Matrix::from_vec(30, 3, b_data).unwrap();
            let v = mmd_rbf(&a, &b, Some(1.0)).unwrap();
            assert!(v >= -1e-9);
            assert!(v <= last + 1e-12, "{v} > {last} at t = {t}");
            last = v;
        }
    }

    #[test]
    fn vendi_extremes() {
        let same = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 5], 3).unwrap();
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
        let ortho = Matrix::identity(4);
        assert!((vendi_score(&ortho).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn vendi_two_plus_one() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]], 2).unwrap();
        let p: [f64; 2] = [2.0 / 3.0, 1.0 / 3.0];
        let expected = (-p.iter().map(|v| v * v.ln()).sum::<f64>()).exp();
        assert!((vendi_score(&x).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1.8899).abs() < 1e-4);
    }

    #[test]
    fn vendi_permutation_invariant_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 12, 6);
        let idx: Vec<usize> = (0..12).rev().collect();
        let v1 = vendi_score(&a).unwrap();
        let v2 = vendi_score(&a.select_rows(&idx)).unwrap();
        assert!((v1 - v2).abs() < 1e-9);
        assert!((1.0 - 1e-9..=12.0 + 1e-9).contains(&v1));
    }
}
