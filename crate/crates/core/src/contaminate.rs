//! Controlled duplicate injection with ground-truth labels.
//!
//! A fraction of test images is *replaced* (not appended) by augmented
//! copies of distinct training images, so the test-set size is constant
//! across duplication levels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensorio::{write_atomic, ImageSlice};

/// The four duplication levels of the standard protocol.
pub const STANDARD_LEVELS: [f64; 4] = [0.05, 0.15, 0.30, 0.45];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub test_index: usize,
    pub train_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPlan {
    pub level: f64,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
    /// `true` at every test index holding an injected duplicate.
    pub labels: Vec<bool>,
    /// Sorted by test index.
    pub source_map: Vec<Replacement>,
}

impl ContaminationPlan {
    pub fn n_injected(&self) -> usize {
        self.source_map.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec_pretty(self)?)
    }
}

/// Number of replacements for a level: `round(level · n_test)`.
pub fn replacement_count(level: f64, n_test: usize) -> usize {
    (level * n_test as f64).round() as usize
}

/// Draws which test slots get replaced and by which train images.
pub fn plan_duplicates(
    n_train: usize,
    n_test: usize,
    level: f64,
    augmentation: AugmentationSpec,
    seed: u64,
) -> Result<ContaminationPlan> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "duplication level must be in (0, 1), got {level}"
        )));
    }
    augmentation.validate()?;
    let k = replacement_count(level, n_test);
    if k == 0 {
        return Err(Error::InvalidConfig(format!(
            "level {level} of {n_test} test samples injects nothing"
        )));
    }
    if k > n_test.min(n_train) {
        return Err(Error::InvalidConfig(format!(
            "{k} replacements requested but only {n_train} train and {n_test} test samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..n_test).collect();
    slots.shuffle(&mut rng);
    let mut sources: Vec<usize> = (0..n_train).collect();
    sources.shuffle(&mut rng);

    let mut source_map: Vec<Replacement> = slots[..k]
        .iter()
        .zip(&sources[..k])
        .map(|(&test_index, &train_index)| Replacement {
            test_index,
            train_index,
        })
        .collect();
    source_map.sort_by_key(|r| r.test_index);

    let mut labels = vec![false; n_test];
    for r in &source_map {
        labels[r.test_index] = true;
    }
    Ok(ContaminationPlan {
        level,
        augmentation,
        seed,
        labels,
        source_map,
    })
}

/// Applies a plan. Unlabeled test images are returned untouched. Each
/// duplicate is augmented with a seed derived from the plan seed and its
/// test index.
pub fn apply_plan(
    train: &[ImageSlice],
    test: &[ImageSlice],
    plan: &ContaminationPlan,
) -> Result<Vec<ImageSlice>> {
    if plan.labels.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: plan.labels.len(),
            found: test.len(),
        });
    }
    let mut out = test.to_vec();
    let replaced: Vec<(usize, ImageSlice)> = plan
        .source_map
        .par_iter()
        .map(|r| {
            let src = train.get(r.train_index).ok_or_else(|| {
                Error::InvalidConfig(format!("train index {} out of range", r.train_index))
            })?;
            let seed = derive_seed(plan.seed, r.test_index as u64);
            Ok((r.test_index, plan.augmentation.apply(src, seed)))
        })
        .collect::<Result<_>>()?;
    for (i, img) in replaced {
        out[i] = img;
    }
    Ok(out)
}

pub fn inject_duplicates(
    train: &[ImageSlice],
    test: &[ImageSlice],
    level: f64,
    augmentation: AugmentationSpec,
    seed: u64,
) -> Result<(Vec<ImageSlice>, ContaminationPlan)> {
    let plan = plan_duplicates(train.len(), test.len(), level, augmentation, seed)?;
    let images = apply_plan(train, test, &plan)?;
    Ok((images, plan))
}
