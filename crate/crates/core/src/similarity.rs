//! Exact nearest-neighbor cosine similarity between whitened feature sets.

use rayon::prelude::*;

use crate::embedder::LayerId;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Accepted deviation of a non-zero row norm from 1.
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSimilarity {
    pub layer_id: LayerId,
    /// Max cosine per test row, clamped to `[-1, 1]`.
    pub scores: Vec<f64>,
    /// Lowest train index attaining the max.
    pub neighbors: Vec<usize>,
    /// Test rows that were the zero vector; they score 0 against everything.
    pub degenerate: Vec<bool>,
}

fn check_rows_normalized(m: &Matrix, what: &'static str) -> Result<()> {
    for row in m.rows() {
        let sq: f64 = row.iter().map(|v| v * v).sum();
        let norm = sq.sqrt();
        if norm != 0.0 && (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "{what} rows must be unit-norm or zero, found norm {norm}"
            )));
        }
    }
    Ok(())
}

/// For each test row, the maximum inner product with any train row. Rows
/// are expected to be ℓ2-normalized (or zero). Brute force over all pairs;
/// parallel over test rows with a fixed scan order, so results do not depend
/// on the thread schedule.
pub fn layer_max_similarity(
    layer_id: LayerId,
    test_w: &Matrix,
    train_w: &Matrix,
) -> Result<LayerSimilarity> {
    if train_w.nrows() == 0 {
        return Err(Error::Empty("train set"));
    }
    if test_w.ncols() != train_w.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_w.ncols(),
            found: test_w.ncols(),
        });
    }
    check_rows_normalized(test_w, "test")?;
    check_rows_normalized(train_w, "train")?;

    let best: Vec<(f64, usize, bool)> = (0..test_w.nrows())
        .into_par_iter()
        .map(|j| {
            let t = test_w.row(j);
            let degenerate = t.iter().all(|&v| v == 0.0);
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, r) in train_w.rows().enumerate() {
                let s = dot(t, r);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            (best.clamp(-1.0, 1.0), arg, degenerate)
        })
        .collect();

    let mut out = LayerSimilarity {
        layer_id,
        scores: Vec::with_capacity(best.len()),
        neighbors: Vec::with_capacity(best.len()),
        degenerate: Vec::with_capacity(best.len()),
    };
    for (s, i, d) in best {
        out.scores.push(s);
        out.neighbors.push(i);
        out.degenerate.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::whiten::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
                l2_normalize(&v).vector
            })
            .collect();
        Matrix::from_rows(&rows, c).unwrap()
    }

    #[test]
    fn identical_row_scores_one_with_lowest_index() {
        let train = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], 2).unwrap();
        let test = Matrix::from_rows(&[[0.0, 1.0]], 2).unwrap();
        let s = layer_max_similarity(3, &test, &train).unwrap();
        assert_eq!(s.scores, vec![1.0]);
        assert_eq!(s.neighbors, vec![1]);
    }

    #[test]
    fn orthogonal_scores_zero() {
        let train = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 3).unwrap();
        let test = Matrix::from_rows(&[[0.0, 0.0, 1.0]], 3).unwrap();
        assert_eq!(layer_max_similarity(0, &test, &train).unwrap().scores, vec![0.0]);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let test = unit_rows(&mut rng, 5, 3);
        let train = unit_rows(&mut rng, 7, 3);
        let got = layer_max_similarity(0, &test, &train).unwrap();
        for j in 0..5 {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for i in 0..7 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += test[(j, c)] * train[(i, c)];
                }
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            assert!((got.scores[j] - best).abs() < 1e-10);
            assert_eq!(got.neighbors[j], arg);
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let train = Matrix::from_rows(&[[1.0, 0.0]], 2).unwrap();
        let test = Matrix::from_rows(&[[0.0, 0.0]], 2).unwrap();
        let s = layer_max_similarity(0, &test, &train).unwrap();
        assert_eq!(s.scores, vec![0.0]);
        assert_eq!(s.degenerate, vec![true]);
    }

    #[test]
    fn errors() {
        let empty = Matrix::zeros(0, 2);
        let test = Matrix::from_rows(&[[1.0, 0.0]], 2).unwrap();
        assert!(matches!(
            layer_max_similarity(0, &test, &empty),
            Err(Error::Empty(_))
        ));
        let train3 = Matrix::from_rows(&[[1.0, 0.0, 0.0]], 3).unwrap();
        assert!(matches!(
            layer_max_similarity(0, &test, &train3),
            Err(Error::DimensionMismatch { .. })
        ));
        let unnormalized = Matrix::from_rows(&[[2.0, 0.0]], 2).unwrap();
        assert!(layer_max_similarity(0, &unnormalized, &test).is_err());
    }
}
