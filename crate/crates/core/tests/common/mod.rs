#![allow(dead_code)]

use std::collections::BTreeMap;

use memaudit::embedder::{FeatureSet, LayerId};
use memaudit::linalg::Matrix;
use memaudit::tensorio::{DatasetManifest, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Matrix {
    let data = (0..n * c).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(n, c, data).unwrap()
}

/// Feature set of i.i.d. standard normal rows, one matrix per `(layer, dim)`.
pub fn gaussian_features(seed: u64, split: Split, n: usize, dims: &[(LayerId, usize)]) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: BTreeMap<LayerId, Matrix> = dims
        .iter()
        .map(|&(id, c)| (id, gaussian_matrix(&mut rng, n, c)))
        .collect();
    FeatureSet::new(DatasetManifest::numbered("gauss", split, n), layers).unwrap()
}

/// Same rows as `fs`, relabelled as a test split.
pub fn as_test(fs: &FeatureSet) -> FeatureSet {
    FeatureSet::new(
        DatasetManifest::numbered(&fs.manifest.name, Split::Test, fs.n_samples()),
        fs.layers().clone(),
    )
    .unwrap()
}
