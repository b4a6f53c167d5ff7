//! Detection metrics and the duplication sweep.
//!
//! Detection scores are oriented so that higher means "more likely a
//! duplicate". The sweep uses the fused similarity `s`; MI is a strictly
//! increasing function of it and gives the same AUC.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::baselines::{frechet_distance, mmd_rbf, vendi_score};
use crate::calibrate::{audit, bootstrap_null, AuditConfig, AuditReport, NullCalibration};
use crate::contaminate::{apply_plan, plan_duplicates, replacement_count, ContaminationPlan};
use crate::embedder::{embed_images, FeatureSet, ReferenceEmbedderConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_path};
use crate::tensorio::{write_atomic, DatasetManifest, ImageSlice, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("detection scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    Ok((n_pos, labels.len() - n_pos))
}

/// Mann–Whitney AUC with average ranks for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC-AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tied block i..=j shares the mean rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_block as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// `Σ_k (R_k − R_{k−1})·P_k` over the ranking by descending score. Tied
/// scores keep their input order (stable sort).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, _) = check_inputs(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::Undefined("average precision needs a positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

pub fn detect(scores: &[f64], labels: &[bool]) -> Result<DetectionResult> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    Ok(DetectionResult {
        auc: roc_auc(scores, labels)?,
        ap: average_precision(scores, labels)?,
        n_pos,
        n_neg,
    })
}

/// Sample standard deviation (1/(n−1)).
pub fn sample_std(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Coefficient of variation `std/|mean|` with the sample std.
pub fn cross_dataset_cv(values: &[f64]) -> Result<f64> {
    let std = sample_std(values)?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        return Err(Error::Undefined("coefficient of variation with zero mean"));
    }
    Ok(std / mean.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MiMean,
    OniMean,
    Auc,
    Ap,
    Frechet,
    Mmd,
    Vendi,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::MiMean,
        Metric::OniMean,
        Metric::Auc,
        Metric::Ap,
        Metric::Frechet,
        Metric::Mmd,
        Metric::Vendi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MiMean => "mi_mean",
            Metric::OniMean => "oni_mean",
            Metric::Auc => "auc",
            Metric::Ap => "ap",
            Metric::Frechet => "frechet",
            Metric::Mmd => "mmd",
            Metric::Vendi => "vendi",
        }
    }
}

/// Baseline columns kept in the long CSV with empty values so downstream
/// tooling sees a stable schema.
pub const RESERVED_METRICS: [&str; 2] = ["ct_score", "auth_pct"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub mi_mean: f64,
    pub oni_mean: f64,
    pub auc: f64,
    pub ap: f64,
    pub frechet: f64,
    pub mmd: f64,
    pub vendi: f64,
    /// Report column the AUC/AP were computed from.
    pub detection_score: String,
    pub n_injected: usize,
}

impl CellMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::MiMean => self.mi_mean,
            Metric::OniMean => self.oni_mean,
            Metric::Auc => self.auc,
            Metric::Ap => self.ap,
            Metric::Frechet => self.frechet,
            Metric::Mmd => self.mmd,
            Metric::Vendi => self.vendi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub level: f64,
    pub augmentation: AugmentationSpec,
}

impl CellKey {
    fn file_stem(&self) -> String {
        format!("{}__{}__{}", self.dataset, self.level, self.augmentation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: CellKey,
    pub metrics: CellMetrics,
}

/// Everything a cell result depends on besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub levels: Vec<f64>,
    pub augmentations: Vec<AugmentationSpec>,
    pub seed: u64,
    pub embedder: ReferenceEmbedderConfig,
    pub audit: AuditConfig,
}

impl SweepConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            levels: crate::contaminate::STANDARD_LEVELS.to_vec(),
            augmentations: AugmentationSpec::standard_grid(),
            seed,
            embedder: ReferenceEmbedderConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<ImageSlice>,
    pub test: Vec<ImageSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub datasets: Vec<String>,
    pub levels: Vec<f64>,
    pub augmentations: Vec<AugmentationSpec>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, dataset: &str, level: f64, aug: &AugmentationSpec) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.key.dataset == dataset && c.key.level == level && &c.key.augmentation == aug)
    }

    pub fn value(&self, dataset: &str, level: f64, aug: &AugmentationSpec, metric: Metric) -> Option<f64> {
        self.cell(dataset, level, aug).map(|c| c.metrics.get(metric))
    }

    /// Metric values across levels (in configured order) for one series.
    pub fn series(&self, dataset: &str, aug: &AugmentationSpec, metric: Metric) -> Result<Vec<f64>> {
        self.levels
            .iter()
            .map(|&l| {
                self.value(dataset, l, aug, metric)
                    .ok_or_else(|| missing_cell(dataset, l, aug))
            })
            .collect()
    }

    /// Checks that every configured (dataset, level, augmentation) cell is
    /// present.
    pub fn validate_complete(&self) -> Result<()> {
        for d in &self.datasets {
            for &l in &self.levels {
                for a in &self.augmentations {
                    self.cell(d, l, a).ok_or_else(|| missing_cell(d, l, a))?;
                }
            }
        }
        Ok(())
    }
}

fn missing_cell(dataset: &str, level: f64, aug: &AugmentationSpec) -> Error {
    Error::InvalidConfig(format!("sweep cell ({dataset}, {level}, {aug}) is missing"))
}

/// Sample standard deviation of `metric` across all augmentation
/// conditions at one (dataset, level).
pub fn augmentation_spread(sweep: &SweepResult, metric: Metric, dataset: &str, level: f64) -> Result<f64> {
    let values: Vec<f64> = sweep
        .augmentations
        .iter()
        .map(|a| {
            sweep
                .value(dataset, level, a, metric)
                .ok_or_else(|| missing_cell(dataset, level, a))
        })
        .collect::<Result<_>>()?;
    sample_std(&values)
}

/// Rejects an unusable sweep configuration before any work is done.
pub fn validate_sweep(datasets: &[Dataset], cfg: &SweepConfig) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::InvalidConfig("no datasets".into()));
    }
    if cfg.levels.is_empty() {
        return Err(Error::InvalidConfig("no duplication levels".into()));
    }
    if cfg.augmentations.is_empty() {
        return Err(Error::InvalidConfig("no augmentations".into()));
    }
    let mut names = HashSet::new();
    for d in datasets {
        if !names.insert(&d.name) {
            return Err(Error::InvalidConfig(format!("duplicate dataset name {}", d.name)));
        }
        for &l in &cfg.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidConfig(format!("level {l} outside (0, 1)")));
            }
            let k = replacement_count(l, d.test.len());
            if k == 0 || k > d.test.len().min(d.train.len()) {
                return Err(Error::InvalidConfig(format!(
                    "level {l} is infeasible for dataset {} ({} train, {} test)",
                    d.name,
                    d.train.len(),
                    d.test.len()
                )));
            }
        }
    }
    let mut seen = HashSet::new();
    for a in &cfg.augmentations {
        a.validate()?;
        if !seen.insert(a.to_string()) {
            return Err(Error::InvalidConfig(format!("augmentation {a} listed twice")));
        }
    }
    cfg.embedder.validate()
}

struct PreparedDataset<'a> {
    data: &'a Dataset,
    train: FeatureSet,
    test_clean: FeatureSet,
    null: NullCalibration,
}

/// Full per-cell output: metrics plus the artifacts behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: SweepCell,
    pub config: SweepConfig,
    pub plan: ContaminationPlan,
    pub report: AuditReport,
}

fn run_cell(p: &PreparedDataset, d_idx: usize, l_idx: usize, a_idx: usize, cfg: &SweepConfig) -> Result<CellRecord> {
    let level = cfg.levels[l_idx];
    let aug = cfg.augmentations[a_idx];
    // One plan seed per dataset: higher levels extend the replacements of
    // lower ones, and every augmentation perturbs the same pairs.
    let seed = derive_seed_path(cfg.seed, &[d_idx as u64]);
    let plan = plan_duplicates(p.data.train.len(), p.data.test.len(), level, aug, seed)?;
    let images = apply_plan(&p.data.train, &p.data.test, &plan)?;

    // only injected rows change; re-embed those and splice them in
    let injected: Vec<usize> = plan.source_map.iter().map(|r| r.test_index).collect();
    let new_imgs: Vec<ImageSlice> = injected.iter().map(|&i| images[i].clone()).collect();
    let new_feats = embed_images(&new_imgs, DatasetManifest::numbered(&p.data.name, Split::Test, new_imgs.len()), &cfg.embedder)?;
    let mut layers = p.test_clean.layers().clone();
    for (id, m) in layers.iter_mut() {
        let fresh = new_feats.layer(*id).unwrap();
        for (r, &i) in injected.iter().enumerate() {
            m.row_mut(i).copy_from_slice(fresh.row(r));
        }
    }
    let test = FeatureSet::new(p.test_clean.manifest.clone(), layers)?;

    let (report, _) = audit(&p.train, &test, &cfg.audit, Some(&p.null))?;
    let det = detect(&report.scores(), &plan.labels)?;

    // baselines on the coarsest layer's raw pooled features
    let deepest = *p.train.layer_ids().last().unwrap();
    let train_deep = p.train.layer(deepest).unwrap();
    let test_deep = test.layer(deepest).unwrap();

    let metrics = CellMetrics {
        mi_mean: report.summary.mean_mi.unwrap_or(f64::NAN),
        oni_mean: report.summary.mean_oni.unwrap_or(f64::NAN),
        auc: det.auc,
        ap: det.ap,
        frechet: frechet_distance(train_deep, test_deep)?,
        mmd: mmd_rbf(train_deep, test_deep, None)?,
        vendi: vendi_score(test_deep)?,
        detection_score: "s".into(),
        n_injected: plan.n_injected(),
    };
    Ok(CellRecord {
        cell: SweepCell {
            key: CellKey {
                dataset: p.data.name.clone(),
                level,
                augmentation: aug,
            },
            metrics,
        },
        config: cfg.clone(),
        plan,
        report,
    })
}

fn prepare<'a>(datasets: &'a [Dataset], cfg: &SweepConfig) -> Result<Vec<PreparedDataset<'a>>> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let train = embed_images(&d.train, DatasetManifest::numbered(&d.name, Split::Train, d.train.len()), &cfg.embedder)?;
            let test_clean = embed_images(&d.test, DatasetManifest::numbered(&d.name, Split::Test, d.test.len()), &cfg.embedder)?;
            let mut boot = cfg.audit.bootstrap.clone();
            boot.seed = derive_seed(cfg.seed ^ boot.seed, i as u64);
            let null = bootstrap_null(&train, &boot, cfg.audit.whiten_epsilon, cfg.audit.aggregate_epsilon)?;
            Ok(PreparedDataset {
                data: d,
                train,
                test_clean,
                null,
            })
        })
        .collect()
}

fn cell_indices(n_d: usize, cfg: &SweepConfig) -> Vec<(usize, usize, usize)> {
    let mut v = Vec::new();
    for d in 0..n_d {
        for l in 0..cfg.levels.len() {
            for a in 0..cfg.augmentations.len() {
                v.push((d, l, a));
            }
        }
    }
    v
}

fn assemble(datasets: &[Dataset], cfg: &SweepConfig, cells: Vec<SweepCell>) -> Result<SweepResult> {
    let result = SweepResult {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        levels: cfg.levels.clone(),
        augmentations: cfg.augmentations.clone(),
        cells,
    };
    result.validate_complete()?;
    Ok(result)
}

/// Runs every (dataset, level, augmentation) cell in memory. Contamination
/// seeds are derived from the global seed and the dataset index, so the
/// result does not depend on scheduling.
pub fn run_sweep(datasets: &[Dataset], cfg: &SweepConfig) -> Result<SweepResult> {
    validate_sweep(datasets, cfg)?;
    let prepared = prepare(datasets, cfg)?;
    let cells = cell_indices(datasets.len(), cfg)
        .into_par_iter()
        .map(|(d, l, a)| run_cell(&prepared[d], d, l, a, cfg).map(|r| r.cell))
        .collect::<Result<Vec<_>>>()?;
    assemble(datasets, cfg, cells)
}

/// Like [`run_sweep`], but persists each cell as `cells/<key>.json` under
/// `out_dir` and reuses any cell file already present for the same
/// configuration. Then writes the long-format CSV, plot series and summary.
pub fn run_sweep_to_dir(datasets: &[Dataset], cfg: &SweepConfig, out_dir: &Path) -> Result<SweepResult> {
    validate_sweep(datasets, cfg)?;
    let cell_dir = out_dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;

    let indices = cell_indices(datasets.len(), cfg);
    let cached: Vec<Option<SweepCell>> = indices
        .iter()
        .map(|&(d, l, a)| {
            let key = CellKey {
                dataset: datasets[d].name.clone(),
                level: cfg.levels[l],
                augmentation: cfg.augmentations[a],
            };
            let path = cell_dir.join(format!("{}.json", key.file_stem()));
            fs::read(&path)
                .ok()
                .and_then(|b| serde_json::from_slice::<CellRecord>(&b).ok())
                .filter(|r| &r.config == cfg && r.cell.key == key)
                .map(|r| r.cell)
        })
        .collect();

    let todo: Vec<usize> = (0..indices.len()).filter(|&i| cached[i].is_none()).collect();
    let mut cells = cached;
    if !todo.is_empty() {
        let prepared = prepare(datasets, cfg)?;
        let fresh: Vec<(usize, SweepCell)> = todo
            .par_iter()
            .map(|&i| {
                let (d, l, a) = indices[i];
                let rec = run_cell(&prepared[d], d, l, a, cfg)?;
                let path = cell_dir.join(format!("{}.json", rec.cell.key.file_stem()));
                write_atomic(&path, &serde_json::to_vec_pretty(&rec)?)?;
                Ok((i, rec.cell))
            })
            .collect::<Result<_>>()?;
        for (i, c) in fresh {
            cells[i] = Some(c);
        }
    }
    let result = assemble(datasets, cfg, cells.into_iter().map(Option::unwrap).collect())?;
    write_sweep_outputs(&result, out_dir)?;
    Ok(result)
}

/// Long-format CSV: `dataset, level, augmentation, metric, value`.
pub fn encode_long_csv(sweep: &SweepResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "level", "augmentation", "metric", "value"])?;
    for c in &sweep.cells {
        let (d, l, a) = (&c.key.dataset, c.key.level.to_string(), c.key.augmentation.to_string());
        for m in Metric::ALL {
            w.write_record([d, &l, &a, m.name(), &c.metrics.get(m).to_string()])?;
        }
        for r in RESERVED_METRICS {
            w.write_record([d.as_str(), &l, &a, r, ""])?;
        }
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Aggregate statistics recorded alongside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// dataset → level → metric → std across augmentations
    pub augmentation_spread: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    /// augmentation → (mean AUC, min AUC) over all datasets and levels
    pub auc_by_augmentation: BTreeMap<String, (f64, f64)>,
    /// level → augmentation → metric → CV across datasets (≥ 2 datasets)
    pub cross_dataset_cv: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

pub fn summarize(sweep: &SweepResult) -> Result<SweepSummary> {
    let mut spread = BTreeMap::new();
    if sweep.augmentations.len() >= 2 {
        for d in &sweep.datasets {
            let mut by_level = BTreeMap::new();
            for &l in &sweep.levels {
                let mut by_metric = BTreeMap::new();
                for m in Metric::ALL {
                    by_metric.insert(m.name().to_string(), augmentation_spread(sweep, m, d, l)?);
                }
                by_level.insert(l.to_string(), by_metric);
            }
            spread.insert(d.clone(), by_level);
        }
    }

    let mut auc_by_aug = BTreeMap::new();
    for a in &sweep.augmentations {
        let v: Vec<f64> = sweep
            .cells
            .iter()
            .filter(|c| &c.key.augmentation == a)
            .map(|c| c.metrics.auc)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        auc_by_aug.insert(a.to_string(), (mean, min));
    }

    let mut cv = BTreeMap::new();
    if sweep.datasets.len() >= 2 {
        for &l in &sweep.levels {
            let mut by_aug = BTreeMap::new();
            for a in &sweep.augmentations {
                let mut by_metric = BTreeMap::new();
                for m in Metric::ALL {
                    let vals: Vec<f64> = sweep
                        .datasets
                        .iter()
                        .map(|d| sweep.value(d, l, a, m).ok_or_else(|| missing_cell(d, l, a)))
                        .collect::<Result<_>>()?;
                    // zero-mean series have no CV; leave them out
                    if let Ok(c) = cross_dataset_cv(&vals) {
                        by_metric.insert(m.name().to_string(), c);
                    }
                }
                by_aug.insert(a.to_string(), by_metric);
            }
            cv.insert(l.to_string(), by_aug);
        }
    }
    Ok(SweepSummary {
        augmentation_spread: spread,
        auc_by_augmentation: auc_by_aug,
        cross_dataset_cv: cv,
    })
}

/// Writes `sweep_long.csv`, `summary.json` and one
/// `plot/<dataset>__<metric>.csv` series file per dataset and metric
/// (columns: level, then one per augmentation).
pub fn write_sweep_outputs(sweep: &SweepResult, out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join("sweep_long.csv"), &encode_long_csv(sweep)?)?;
    write_atomic(
        &out_dir.join("summary.json"),
        &serde_json::to_vec_pretty(&summarize(sweep)?)?,
    )?;
    let plot_dir = out_dir.join("plot");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    for d in &sweep.datasets {
        for m in Metric::ALL {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["level".to_string()];
            header.extend(sweep.augmentations.iter().map(|a| a.to_string()));
            w.write_record(&header)?;
            for &l in &sweep.levels {
                let mut row = vec![l.to_string()];
                for a in &sweep.augmentations {
                    let v = sweep.value(d, l, a, m).ok_or_else(|| missing_cell(d, l, a))?;
                    row.push(v.to_string());
                }
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
            write_atomic(&plot_dir.join(format!("{d}__{}.csv", m.name())), &bytes)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        // every positive outranks every negative here (0.4 > 0.35)
        assert_eq!(roc_auc(&s, &[false, true, false, true]).unwrap(), 1.0);
        // 0.35 beats 0.1 but loses to 0.4; 0.8 beats both: 3 of 4 pairs
        assert_eq!(roc_auc(&s, &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_auc(&[f64::NAN, 2.0], &[true, false]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.3, 0.1], &[false, true, false, false]).unwrap(),
            0.5
        );
        assert!(average_precision(&[0.1, 0.2], &[false, false]).is_err());
        // ties keep input order: the positive listed second ranks second
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn spread_and_cv() {
        assert_eq!(sample_std(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((sample_std(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let cv = cross_dataset_cv(&[1.0, 1.0, 4.0]).unwrap();
        assert!((cv - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((cv - 0.866).abs() < 1e-3);
        assert_eq!(cross_dataset_cv(&[5.0, 5.0]).unwrap(), 0.0);
        assert!(matches!(cross_dataset_cv(&[-1.0, 1.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn metric_names_are_unique() {
        let names: HashSet<_> = Metric::ALL.iter().map(|m| m.name()).collect();
        assert_eq!(names.len(), Metric::ALL.len());
    }

    fn tiny_dataset() -> Dataset {
        let c = crate::synthetic::generate(&crate::synthetic::SyntheticConfig {
            n: 40,
            size: 32,
            seed: 3,
        })
        .unwrap();
        Dataset {
            name: "tiny".into(),
            train: c.train,
            test: c.test,
        }
    }

    #[test]
    fn sweep_validation_fails_fast() {
        let d = vec![tiny_dataset()];
        let mut cfg = SweepConfig::standard(1);
        cfg.augmentations.clear();
        assert!(run_sweep(&d, &cfg).is_err());
        let mut cfg = SweepConfig::standard(1);
        cfg.levels = vec![1.5];
        assert!(run_sweep(&d, &cfg).is_err());
        let mut cfg = SweepConfig::standard(1);
        cfg.augmentations.push(AugmentationSpec::Clean);
        assert!(run_sweep(&d, &cfg).is_err());
    }

    #[test]
    fn incomplete_sweep_detected() {
        let mut s = SweepResult {
            datasets: vec!["a".into()],
            levels: vec![0.1],
            augmentations: vec![AugmentationSpec::Clean, AugmentationSpec::FlipH],
            cells: vec![],
        };
        assert!(s.validate_complete().is_err());
        s.cells.push(SweepCell {
            key: CellKey {
                dataset: "a".into(),
                level: 0.1,
                augmentation: AugmentationSpec::Clean,
            },
            metrics: CellMetrics {
                mi_mean: 0.0,
                oni_mean: 0.0,
                auc: 1.0,
                ap: 1.0,
                frechet: 0.0,
                mmd: 0.0,
                vendi: 1.0,
                detection_score: "s".into(),
                n_injected: 1,
            },
        });
        assert!(s.validate_complete().is_err());
        assert!(augmentation_spread(&s, Metric::Auc, "a", 0.1).is_err());
    }
}
