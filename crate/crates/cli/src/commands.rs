use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use log::info;

use memaudit::augment::AugmentationSpec;
use memaudit::calibrate::{AuditConfig, BootstrapConfig, NullCalibration};
use memaudit::contaminate::inject_duplicates;
use memaudit::embedder::{embed_images, layer_tensor, load_external_features};
use memaudit::eval::{run_sweep_to_dir, summarize, Dataset, Metric, SweepConfig};
use memaudit::synthetic::{generate, SyntheticConfig};
use memaudit::tensorio::{
    encode_pgm, encode_tensor, read_image, write_atomic, write_report, DatasetManifest, ReportFormat, Split,
};
use memaudit::{AuditReport, FeatureSet, ImageSlice, ReferenceEmbedderConfig};

use crate::{GlobalArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn out_dir(explicit: Option<PathBuf>, g: &GlobalArgs) -> Result<PathBuf> {
    explicit
        .or_else(|| g.output_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or --output-dir"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a manifest together with the directory its relative paths are
/// resolved against.
fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let m = DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
    Ok((m, manifest_dir(path)))
}

fn load_images(manifest: &DatasetManifest, base: &Path) -> Result<Vec<ImageSlice>> {
    manifest
        .samples
        .iter()
        .map(|s| {
            let p = DatasetManifest::resolve(base, &s.path);
            read_image(&p).with_context(|| format!("reading image for sample {:?}", s.id))
        })
        .collect()
}

fn load_embedder_config(path: Option<&Path>) -> Result<ReferenceEmbedderConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ReferenceEmbedderConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Feature manifests (non-empty `layers`) load their MATF matrices; image
/// manifests are embedded with the reference embedder.
fn load_features(path: &Path, embedder: &ReferenceEmbedderConfig) -> Result<FeatureSet> {
    let (m, base) = load_manifest(path)?;
    if m.layers.is_empty() {
        let images = load_images(&m, &base)?;
        Ok(embed_images(&images, m, embedder)?)
    } else {
        Ok(load_external_features(&m, &base)?)
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Image manifest (JSON).
    #[arg(long)]
    images: PathBuf,
    /// Reference embedder configuration (JSON); defaults to the built-in grids.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn embed(g: &GlobalArgs, a: EmbedArgs) -> Result<()> {
    let out = out_dir(a.out, g)?;
    let cfg = load_embedder_config(a.config.as_deref())?;
    let (manifest, base) = load_manifest(&a.images)?;
    let images = load_images(&manifest, &base)?;
    let feats = embed_images(&images, manifest, &cfg)?;

    // all inputs are read and embedded before anything is written
    let mut out_manifest = feats.manifest.clone();
    for s in &mut out_manifest.samples {
        let p = DatasetManifest::resolve(&base, &s.path);
        s.path = fs::canonicalize(&p).unwrap_or(p);
    }
    create_dir(&out)?;
    for (&id, m) in feats.layers() {
        let name = format!("layer_{id}.matf");
        write_atomic(&out.join(&name), &encode_tensor(&layer_tensor(m)))?;
        out_manifest.features.insert(id, PathBuf::from(name));
    }
    out_manifest.save(out.join("manifest.json"))?;
    info!("embedded {} images into {} layers", feats.n_samples(), feats.layers().len());
    println!("wrote {} layer files and manifest.json to {}", feats.layers().len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Train manifest: feature manifest or image manifest.
    #[arg(long)]
    train: PathBuf,
    /// Test manifest of the same kind as `--train`.
    #[arg(long)]
    test: PathBuf,
    /// Reuse a saved null calibration instead of bootstrapping.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Flag samples whose ONI is strictly below this value.
    #[arg(long, default_value_t = memaudit::calibrate::DEFAULT_ONI_THRESHOLD)]
    threshold: f64,
    /// Bootstrap iterations for the null.
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Embedder configuration used when the manifests list images.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn audit(g: &GlobalArgs, a: AuditArgs) -> Result<()> {
    let out = out_dir(a.out, g)?;
    if !a.threshold.is_finite() {
        return Err(usage("--threshold must be finite"));
    }
    let embedder = load_embedder_config(a.config.as_deref())?;
    let train = load_features(&a.train, &embedder)?;
    let test = load_features(&a.test, &embedder)?;
    let calibration = a
        .calibration
        .as_deref()
        .map(|p| NullCalibration::load(p).with_context(|| format!("loading calibration {}", p.display())))
        .transpose()?;

    let cfg = AuditConfig {
        threshold: a.threshold,
        bootstrap: BootstrapConfig {
            n_iterations: a.iterations,
            seed: g.seed,
            ..BootstrapConfig::default()
        },
        ..AuditConfig::default()
    };
    let (report, null) = memaudit::audit(&train, &test, &cfg, calibration.as_ref())?;

    create_dir(&out)?;
    write_report(out.join("report.csv"), &report, ReportFormat::Csv)?;
    write_report(out.join("report.json"), &report, ReportFormat::Json)?;
    null.save(out.join("calibration.json"))?;
    print_summary(&report);
    Ok(())
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Train image manifest (duplicate sources).
    #[arg(long)]
    train: PathBuf,
    /// Test image manifest (slots to overwrite).
    #[arg(long)]
    test: PathBuf,
    /// Fraction of test samples to replace, in (0, 1).
    #[arg(long)]
    level: f64,
    /// Augmentation tag, e.g. clean, noise_0.01, rot_3, flip_h, intensity.
    #[arg(long, default_value = "clean")]
    aug: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn extension_of(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("pgm").to_string()
}

pub fn inject(g: &GlobalArgs, a: InjectArgs) -> Result<()> {
    let out = out_dir(a.out, g)?;
    let aug: AugmentationSpec = a.aug.parse()?;
    let (train_m, train_base) = load_manifest(&a.train)?;
    let (test_m, test_base) = load_manifest(&a.test)?;
    let train = load_images(&train_m, &train_base)?;
    let test = load_images(&test_m, &test_base)?;
    let (images, plan) = inject_duplicates(&train, &test, a.level, aug, g.seed)?;

    // Untouched slots and clean copies keep their source files byte for
    // byte; augmented duplicates are written as 16-bit PGM.
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::with_capacity(test.len());
    let mut source_of = vec![None; test.len()];
    for r in &plan.source_map {
        source_of[r.test_index] = Some(r.train_index);
    }
    let mut out_manifest = test_m.clone();
    for (i, sample) in out_manifest.samples.iter_mut().enumerate() {
        let (bytes, ext) = match (source_of[i], aug) {
            (None, _) => {
                let p = DatasetManifest::resolve(&test_base, &test_m.samples[i].path);
                (fs::read(&p).with_context(|| format!("reading {}", p.display()))?, extension_of(&p))
            }
            (Some(src), AugmentationSpec::Clean) => {
                let p = DatasetManifest::resolve(&train_base, &train_m.samples[src].path);
                (fs::read(&p).with_context(|| format!("reading {}", p.display()))?, extension_of(&p))
            }
            (Some(_), _) => (encode_pgm(&images[i], true), "pgm".to_string()),
        };
        let rel = PathBuf::from("images").join(format!("{}.{ext}", sample.id));
        sample.path = rel.clone();
        files.push((rel, bytes));
    }

    create_dir(&out.join("images"))?;
    for (rel, bytes) in &files {
        write_atomic(&out.join(rel), bytes)?;
    }
    out_manifest.save(out.join("test.json"))?;
    plan.save(out.join("plan.json"))?;
    println!(
        "replaced {} of {} test samples ({aug}); manifest at {}",
        plan.n_injected(),
        test.len(),
        out.join("test.json").display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated datasets: directories holding train.json and
    /// test.json image manifests, or `synthetic[:seed]`.
    #[arg(long, value_delimiter = ',', default_value = "synthetic")]
    datasets: Vec<String>,
    /// Duplication levels.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.30,0.45")]
    levels: Vec<f64>,
    /// `all` for the standard eight conditions, or comma-separated tags.
    #[arg(long, default_value = "all")]
    augs: String,
    /// Image count for synthetic datasets.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Image side length for synthetic datasets.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Embedder configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_augs(spec: &str) -> Result<Vec<AugmentationSpec>> {
    if spec == "all" {
        return Ok(AugmentationSpec::standard_grid());
    }
    let augs: Vec<AugmentationSpec> = spec
        .split(',')
        .map(|t| t.trim().parse::<AugmentationSpec>())
        .collect::<memaudit::Result<_>>()?;
    if augs.is_empty() {
        return Err(usage("--augs is empty"));
    }
    Ok(augs)
}

fn load_dataset(spec: &str, a: &BenchmarkArgs, g: &GlobalArgs) -> Result<Dataset> {
    if let Some(rest) = spec.strip_prefix("synthetic") {
        let seed = match rest.strip_prefix(':') {
            Some(s) => s.parse().map_err(|_| usage(format!("bad synthetic seed in {spec:?}")))?,
            None if rest.is_empty() => g.seed,
            None => return Err(usage(format!("unknown dataset {spec:?}"))),
        };
        let c = generate(&SyntheticConfig {
            n: a.n,
            size: a.size,
            seed,
        })?;
        return Ok(Dataset {
            name: format!("synthetic_{seed}"),
            train: c.train,
            test: c.test,
        });
    }
    let dir = Path::new(spec);
    if !dir.is_dir() {
        return Err(usage(format!("dataset {spec:?} is neither a directory nor synthetic[:seed]")));
    }
    let (train_m, train_base) = load_manifest(&dir.join("train.json"))?;
    let (test_m, test_base) = load_manifest(&dir.join("test.json"))?;
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .map(String::from)
        .unwrap_or_else(|| train_m.name.clone());
    Ok(Dataset {
        name,
        train: load_images(&train_m, &train_base)?,
        test: load_images(&test_m, &test_base)?,
    })
}

pub fn benchmark(g: &GlobalArgs, a: BenchmarkArgs) -> Result<()> {
    let out = out_dir(a.out.clone(), g)?;
    if a.levels.is_empty() {
        return Err(usage("--levels is empty"));
    }
    let mut cfg = SweepConfig::standard(g.seed);
    cfg.levels = a.levels.clone();
    cfg.augmentations = parse_augs(&a.augs)?;
    cfg.embedder = load_embedder_config(a.config.as_deref())?;
    let datasets: Vec<Dataset> = a
        .datasets
        .iter()
        .map(|d| load_dataset(d, &a, g))
        .collect::<Result<_>>()?;
    memaudit::eval::validate_sweep(&datasets, &cfg)?;

    create_dir(&out)?;
    let sweep = run_sweep_to_dir(&datasets, &cfg, &out)?;
    let summary = summarize(&sweep)?;
    println!("{:<14} {:>8} {:>8}", "augmentation", "mean AUC", "min AUC");
    for a in &sweep.augmentations {
        let (mean, min) = summary.auc_by_augmentation[&a.to_string()];
        println!("{:<14} {mean:>8.4} {min:>8.4}", a.to_string());
    }
    for d in &sweep.datasets {
        let mi = sweep.series(d, &AugmentationSpec::Clean, Metric::MiMean).ok();
        if let Some(mi) = mi {
            let parts: Vec<String> = mi.iter().map(|v| format!("{v:.3}")).collect();
            println!("{d}: clean mean MI by level [{}]", parts.join(", "));
        }
    }
    println!("results in {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Total images; the first half is the train split.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gen_synthetic(g: &GlobalArgs, a: GenSyntheticArgs) -> Result<()> {
    let out = out_dir(a.out, g)?;
    let corpus = generate(&SyntheticConfig {
        n: a.n,
        size: a.size,
        seed: g.seed,
    })?;
    create_dir(&out.join("images"))?;
    for (split, images) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        let mut m = DatasetManifest::numbered(&format!("synthetic_{}", g.seed), split, images.len());
        for (s, img) in m.samples.iter_mut().zip(images.iter()) {
            s.path = Path::new("images").join(&s.path);
            write_atomic(&out.join(&s.path), &encode_pgm(img, true))?;
        }
        let name = match split {
            Split::Train => "train.json",
            Split::Test => "test.json",
        };
        m.save(out.join(name))?;
    }
    println!(
        "generated {} train and {} test images in {}",
        corpus.train.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Audit report JSON written by `audit`.
    #[arg(long)]
    input: PathBuf,
    /// Number of highest-MI samples to list.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn print_summary(report: &AuditReport) {
    let s = &report.summary;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} samples, {} flagged (ONI < {}), mean MI {}, mean ONI {}",
        s.n_samples,
        s.n_flagged,
        s.threshold,
        fmt(s.mean_mi),
        fmt(s.mean_oni)
    );
    println!(
        "null: mu {:.6}, sigma {:.6} over {} samples",
        s.calibration.mu_null, s.calibration.sigma_null, s.calibration.n_samples
    );
}

pub fn report(a: ReportArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: AuditReport =
        serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: not an audit report: {e}", a.input.display())))?;
    print_summary(&report);
    let mut order: Vec<usize> = (0..report.samples.len()).collect();
    order.sort_by(|&i, &j| report.samples[j].mi.total_cmp(&report.samples[i].mi));
    println!("{:<24} {:>10} {:>10} {:>8} {:>9}", "sample_id", "MI", "ONI", "flagged", "consensus");
    for &i in order.iter().take(a.top) {
        let s = &report.samples[i];
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>8} {:>9}",
            s.sample_id, s.mi, s.oni, s.flagged, s.consensus
        );
    }
    Ok(())
}
