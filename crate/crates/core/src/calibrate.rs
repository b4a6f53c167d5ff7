//! Empirical-null calibration and the end-to-end audit.
//!
//! The null is built from train-vs-train similarity: each iteration splits
//! a shuffled copy of the train set into two disjoint halves A and B, refits
//! whitening on A and scores B against A with the same aggregation used for
//! test samples. All per-sample scores from all iterations are pooled.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, aggregate_sample, AggregatedScore};
use crate::embedder::{FeatureSet, LayerId};
use crate::error::{Error, Result};
use crate::similarity::layer_max_similarity;
use crate::tensorio::write_atomic;
use crate::whiten::{self, fit_whitening, whiten_and_normalize};

/// Ridge added to the null variance before the square root.
pub const NULL_VARIANCE_RIDGE: f64 = 1e-8;

/// Default flag threshold on ONI.
pub const DEFAULT_ONI_THRESHOLD: f64 = 0.68;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub mu_null: f64,
    pub sigma_null: f64,
    pub n_iterations: usize,
    pub fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub allow_overlap: bool,
    pub samples: Vec<f64>,
}

impl NullCalibration {
    /// Summary statistics from pooled null samples: mean and
    /// `sqrt(population variance + 1e-8)`.
    pub fn from_samples(
        samples: Vec<f64>,
        n_iterations: usize,
        fraction: f64,
        seed: u64,
        allow_overlap: bool,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("null samples"));
        }
        let n = samples.len() as f64;
        let mu_null = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mu_null).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mu_null,
            sigma_null: (var + NULL_VARIANCE_RIDGE).sqrt(),
            n_iterations,
            fraction,
            seed,
            allow_overlap,
            samples,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: NullCalibration = serde_json::from_str(&text)?;
        if !(cal.sigma_null > 0.0 && cal.mu_null.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{}: calibration needs finite mu_null and positive sigma_null",
                path.display()
            )));
        }
        Ok(cal)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec_pretty(self)?)
    }

    pub fn summary(&self) -> CalibrationSummary {
        CalibrationSummary {
            mu_null: self.mu_null,
            sigma_null: self.sigma_null,
            n_iterations: self.n_iterations,
            fraction: self.fraction,
            seed: self.seed,
            n_samples: self.samples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub mu_null: f64,
    pub sigma_null: f64,
    pub n_iterations: usize,
    pub fraction: f64,
    pub seed: u64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_iterations: usize,
    pub fraction: f64,
    pub seed: u64,
    /// Draw A and B independently instead of as disjoint halves of one
    /// shuffle. Overlap lets a sample match itself with similarity 1.
    pub allow_overlap: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_iterations: 10,
            fraction: 0.5,
            seed: 42,
            allow_overlap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub whiten_epsilon: f64,
    pub aggregate_epsilon: f64,
    pub bootstrap: BootstrapConfig,
    /// Samples with ONI strictly below this are flagged.
    pub threshold: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            whiten_epsilon: whiten::DEFAULT_EPSILON,
            aggregate_epsilon: aggregate::DEFAULT_EPSILON,
            bootstrap: BootstrapConfig::default(),
            threshold: DEFAULT_ONI_THRESHOLD,
        }
    }
}

fn check_layers(train: &FeatureSet, test: &FeatureSet) -> Result<()> {
    let (a, b) = (train.layer_ids(), test.layer_ids());
    if a != b {
        return Err(Error::LayerMismatch { train: a, test: b });
    }
    for (id, m) in train.layers() {
        let t = test.layer(*id).unwrap();
        if m.ncols() != t.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.ncols(),
                found: t.ncols(),
            });
        }
    }
    Ok(())
}

/// Whitens both sets with a transform fit on `reference` (per layer), finds
/// each query's nearest reference row per layer, and aggregates across
/// layers.
pub fn score_against(
    reference: &FeatureSet,
    query: &FeatureSet,
    whiten_epsilon: f64,
    aggregate_epsilon: f64,
) -> Result<Vec<AggregatedScore>> {
    check_layers(reference, query)?;
    let mut per_layer = Vec::new();
    for (&id, ref_m) in reference.layers() {
        let t = fit_whitening(id, ref_m, whiten_epsilon)?;
        let (ref_w, _) = whiten_and_normalize(&t, ref_m)?;
        let (query_w, _) = whiten_and_normalize(&t, query.layer(id).unwrap())?;
        per_layer.push(layer_max_similarity(id, &query_w, &ref_w)?);
    }
    (0..query.n_samples())
        .map(|j| {
            let layers: BTreeMap<LayerId, (f64, usize)> = per_layer
                .iter()
                .map(|l| (l.layer_id, (l.scores[j], l.neighbors[j])))
                .collect();
            aggregate_sample(layers, aggregate_epsilon)
        })
        .collect()
}

/// Deterministic RNG for one bootstrap iteration: the seed picks the key,
/// the iteration index picks the stream.
fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

fn split_indices(n: usize, half: usize, rng: &mut ChaCha8Rng, allow_overlap: bool) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if allow_overlap {
        let a = idx[..half].to_vec();
        idx.shuffle(rng);
        (a, idx[..half].to_vec())
    } else {
        (idx[..half].to_vec(), idx[half..2 * half].to_vec())
    }
}

pub fn bootstrap_null(
    train: &FeatureSet,
    cfg: &BootstrapConfig,
    whiten_epsilon: f64,
    aggregate_epsilon: f64,
) -> Result<NullCalibration> {
    let n = train.n_samples();
    if n < 4 {
        return Err(Error::InsufficientSamples {
            required: 4,
            found: n,
        });
    }
    if !(cfg.fraction > 0.0 && cfg.fraction <= 0.5) {
        return Err(Error::InvalidConfig(format!(
            "bootstrap fraction must be in (0, 0.5], got {}",
            cfg.fraction
        )));
    }
    if cfg.n_iterations == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one iteration".into()));
    }
    let half = (cfg.fraction * n as f64).floor() as usize;
    if half < 2 {
        return Err(Error::InsufficientSamples {
            required: (2.0 / cfg.fraction).ceil() as usize,
            found: n,
        });
    }

    let per_iter: Vec<Vec<f64>> = (0..cfg.n_iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(cfg.seed, it);
            let (a, b) = split_indices(n, half, &mut rng, cfg.allow_overlap);
            let scores = score_against(&train.select(&a), &train.select(&b), whiten_epsilon, aggregate_epsilon)?;
            Ok(scores.into_iter().map(|s| s.s).collect())
        })
        .collect::<Result<_>>()?;

    NullCalibration::from_samples(
        per_iter.into_iter().flatten().collect(),
        cfg.n_iterations,
        cfg.fraction,
        cfg.seed,
        cfg.allow_overlap,
    )
}

pub fn memorization_index(s: f64, null: &NullCalibration) -> f64 {
    (s - null.mu_null) / null.sigma_null
}

pub fn overfit_novelty_index(mi: f64) -> f64 {
    -mi.tanh()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub s: f64,
    pub d: f64,
    pub mi: f64,
    pub oni: f64,
    pub flagged: bool,
    pub consensus: usize,
    pub modal_neighbor: usize,
    /// layer → (layer similarity, neighbor train index)
    pub per_layer: BTreeMap<LayerId, (f64, usize)>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_samples: usize,
    pub n_flagged: usize,
    pub mean_mi: Option<f64>,
    pub mean_oni: Option<f64>,
    pub threshold: f64,
    pub calibration: CalibrationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub layers: Vec<LayerId>,
    pub samples: Vec<SampleScore>,
    pub summary: ReportSummary,
}

impl AuditReport {
    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.s).collect()
    }

    pub fn mi(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mi).collect()
    }

    pub fn oni(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.oni).collect()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].flagged).collect()
    }
}

/// Builds a report from aggregated test scores and a calibration.
pub fn build_report(
    sample_ids: Vec<String>,
    layers: Vec<LayerId>,
    scores: Vec<AggregatedScore>,
    null: &NullCalibration,
    threshold: f64,
) -> AuditReport {
    let samples: Vec<SampleScore> = sample_ids
        .into_iter()
        .zip(scores)
        .map(|(sample_id, a)| {
            let mi = memorization_index(a.s, null);
            let oni = overfit_novelty_index(mi);
            SampleScore {
                sample_id,
                s: a.s,
                d: a.d,
                mi,
                oni,
                flagged: oni < threshold,
                consensus: a.consensus,
                modal_neighbor: a.modal_neighbor,
                per_layer: a.per_layer,
                clamped: a.clamped,
            }
        })
        .collect();
    let n = samples.len();
    let mean = |f: fn(&SampleScore) -> f64| {
        (n > 0).then(|| samples.iter().map(f).sum::<f64>() / n as f64)
    };
    let clamped = samples.iter().filter(|s| s.clamped).count();
    if clamped > 0 {
        log::debug!("{clamped} samples had negative layer similarities clamped to 0");
    }
    let summary = ReportSummary {
        n_samples: n,
        n_flagged: samples.iter().filter(|s| s.flagged).count(),
        mean_mi: mean(|s| s.mi),
        mean_oni: mean(|s| s.oni),
        threshold,
        calibration: null.summary(),
    };
    AuditReport {
        layers,
        samples,
        summary,
    }
}

/// Runs the whole pipeline. With `calibration` supplied the bootstrap is
/// skipped and that null is reused.
pub fn audit(
    train: &FeatureSet,
    test: &FeatureSet,
    cfg: &AuditConfig,
    calibration: Option<&NullCalibration>,
) -> Result<(AuditReport, NullCalibration)> {
    check_layers(train, test)?;
    let scores = score_against(train, test, cfg.whiten_epsilon, cfg.aggregate_epsilon)?;
    let null = match calibration {
        Some(c) => c.clone(),
        None => bootstrap_null(train, &cfg.bootstrap, cfg.whiten_epsilon, cfg.aggregate_epsilon)?,
    };
    let report = build_report(test.sample_ids(), train.layer_ids(), scores, &null, cfg.threshold);
    Ok((report, null))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn null(mu: f64, sigma: f64) -> NullCalibration {
        NullCalibration {
            mu_null: mu,
            sigma_null: sigma,
            n_iterations: 1,
            fraction: 0.5,
            seed: 0,
            allow_overlap: false,
            samples: vec![mu],
        }
    }

    #[test]
    fn mi_examples() {
        let n = null(0.6, 0.05);
        assert_eq!(memorization_index(0.6, &n), 0.0);
        assert!((memorization_index(0.65, &n) - 1.0).abs() < 1e-12);
        assert!((memorization_index(0.9, &n) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn oni_examples() {
        assert_eq!(overfit_novelty_index(0.0), 0.0);
        assert!((overfit_novelty_index(1.0) + 0.761_594_155_955_764_9).abs() < 1e-15);
        assert_eq!(overfit_novelty_index(1e6), -1.0);
        assert!(overfit_novelty_index(-3.0) > 0.99);
    }

    #[test]
    fn null_statistics() {
        let cal = NullCalibration::from_samples(vec![1.0, 3.0], 1, 0.5, 0, false).unwrap();
        assert_eq!(cal.mu_null, 2.0);
        assert!((cal.sigma_null - (1.0f64 + 1e-8).sqrt()).abs() < 1e-15);

        let flat = NullCalibration::from_samples(vec![0.7; 10], 1, 0.5, 0, false).unwrap();
        assert!((flat.sigma_null - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn split_is_disjoint() {
        let mut rng = iteration_rng(9, 3);
        let (a, b) = split_indices(21, 10, &mut rng, false);
        assert_eq!(a.len(), 10);
        assert_eq!(b.len(), 10);
        assert!(a.iter().all(|i| !b.contains(i)));
    }

    #[test]
    fn iteration_streams_differ() {
        let mut a = iteration_rng(1, 0);
        let mut b = iteration_rng(1, 1);
        let (x, _) = split_indices(50, 20, &mut a, false);
        let (y, _) = split_indices(50, 20, &mut b, false);
        assert_ne!(x, y);
    }
}
