mod common;

use memaudit::augment::flip_h;
use memaudit::calibrate::{bootstrap_null, AuditConfig, BootstrapConfig};
use memaudit::contaminate::inject_duplicates;
use memaudit::embedder::{embed_images, embed_reference, GridSpec, ReferenceEmbedderConfig};
use memaudit::synthetic::{blob_image, generate, SyntheticConfig};
use memaudit::tensorio::{DatasetManifest, Split};
use memaudit::{audit, Error, FeatureSet, Matrix};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Null mean computed directly from the procedure's definition: disjoint
/// halves from one shuffle per iteration, ZCA fit on A, cosine max over A
/// for each row of B, geometric mean across layers, pooled over iterations.
fn oracle_null_mean(train: &FeatureSet, iterations: usize, seed: u64, eps_w: f64, eps_a: f64) -> f64 {
    let n = train.n_samples();
    let half = n / 2;
    let mut pooled = Vec::new();
    for it in 0..iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(it as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (a, b) = (&idx[..half], &idx[half..2 * half]);

        let mut log_sum = vec![0.0; b.len()];
        let n_layers = train.layers().len() as f64;
        for m in train.layers().values() {
            let c = m.ncols();
            let xa = DMatrix::from_fn(a.len(), c, |i, j| m.row(a[i])[j]);
            let xb = DMatrix::from_fn(b.len(), c, |i, j| m.row(b[i])[j]);
            let mean = xa.row_mean();
            let ca = DMatrix::from_fn(a.len(), c, |i, j| xa[(i, j)] - mean[j]);
            let cov = ca.transpose() * &ca / (a.len() as f64 - 1.0);
            let eig = SymmetricEigen::new(cov);
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (l.max(0.0) + eps_w).powf(-0.5)));
            let w = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            let white = |x: &DMatrix<f64>| {
                let centered = DMatrix::from_fn(x.nrows(), c, |i, j| x[(i, j)] - mean[j]);
                let mut z = centered * &w;
                for mut row in z.row_iter_mut() {
                    let norm = row.norm();
                    if norm > 1e-12 {
                        row /= norm;
                    } else {
                        row.fill(0.0);
                    }
                }
                z
            };
            let (za, zb) = (white(&xa), white(&xb));
            let sims = &zb * za.transpose();
            for (j, acc) in log_sum.iter_mut().enumerate() {
                let best = sims.row(j).max().clamp(-1.0, 1.0);
                *acc += (best.max(0.0) + eps_a).ln();
            }
        }
        pooled.extend(log_sum.iter().map(|l| (l / n_layers).exp()));
    }
    pooled.iter().sum::<f64>() / pooled.len() as f64
}

#[test]
fn bootstrap_mean_matches_independent_oracle() {
    let train = common::gaussian_features(100, Split::Train, 100, &[(3, 6), (7, 4), (11, 3)]);
    let cfg = BootstrapConfig::default();
    let null = bootstrap_null(&train, &cfg, 1e-6, 1e-6).unwrap();
    let oracle = oracle_null_mean(&train, cfg.n_iterations, cfg.seed, 1e-6, 1e-6);
    assert!((null.mu_null - oracle).abs() <= 1e-6, "{} vs {oracle}", null.mu_null);
    assert_eq!(null.samples.len(), cfg.n_iterations * 50);
    assert!((0.0..=1.0).contains(&null.mu_null));
}

#[test]
fn bootstrap_is_deterministic_and_validates() {
    let train = common::gaussian_features(4, Split::Train, 30, &[(0, 3)]);
    let cfg = BootstrapConfig::default();
    let a = bootstrap_null(&train, &cfg, 1e-6, 1e-6).unwrap();
    let b = bootstrap_null(&train, &cfg, 1e-6, 1e-6).unwrap();
    assert_eq!(a, b);

    let bad = BootstrapConfig {
        fraction: 0.6,
        ..cfg.clone()
    };
    assert!(matches!(bootstrap_null(&train, &bad, 1e-6, 1e-6), Err(Error::InvalidConfig(_))));
    let tiny = common::gaussian_features(4, Split::Train, 3, &[(0, 3)]);
    assert!(matches!(
        bootstrap_null(&tiny, &cfg, 1e-6, 1e-6),
        Err(Error::InsufficientSamples { .. })
    ));
}

#[test]
fn identical_train_rows_give_a_degenerate_null() {
    let row = [0.3, -1.2, 0.8];
    let data: Vec<f64> = (0..20).flat_map(|_| row).collect();
    let layers = [(0, Matrix::from_vec(20, 3, data).unwrap())].into();
    let train = FeatureSet::new(DatasetManifest::numbered("same", Split::Train, 20), layers).unwrap();
    let null = bootstrap_null(&train, &BootstrapConfig::default(), 1e-6, 1e-6).unwrap();
    // all whitened rows are zero, so every similarity is 0 and s = ε
    assert!(null.sigma_null >= 1e-4);
    assert!((null.sigma_null - 1e-4).abs() < 1e-9);
}

#[test]
fn full_duplication_flags_everything() {
    let train = common::gaussian_features(5, Split::Train, 60, &[(3, 6), (7, 4)]);
    let test = common::as_test(&train);
    let (report, _) = audit(&train, &test, &AuditConfig::default(), None).unwrap();
    assert_eq!(report.flagged_indices().len(), 60);
    for s in &report.samples {
        assert!((s.s - 1.0).abs() < 1e-5);
        assert!(s.oni < -0.99);
        assert_eq!(s.consensus, 2);
    }
}

#[test]
fn disjoint_gaussian_test_sits_near_the_null() {
    for c in [3, 8, 20] {
        for seed in 0..3u64 {
            let dims = [(0, c)];
            let train = common::gaussian_features(2 * seed, Split::Train, 100, &dims);
            let test = common::gaussian_features(2 * seed + 1, Split::Test, 100, &dims);
            let (report, _) = audit(&train, &test, &AuditConfig::default(), None).unwrap();
            let mean = report.summary.mean_mi.unwrap();
            assert!(mean.abs() < 1.0, "C = {c}, seed {seed}: mean MI {mean}");
        }
    }
}

#[test]
fn threshold_semantics() {
    let train = common::gaussian_features(8, Split::Train, 50, &[(0, 4)]);
    let test = common::gaussian_features(9, Split::Test, 50, &[(0, 4)]);
    let cfg = AuditConfig {
        threshold: 0.0,
        ..AuditConfig::default()
    };
    let (report, _) = audit(&train, &test, &cfg, None).unwrap();
    for s in &report.samples {
        assert_eq!(s.flagged, s.oni < 0.0);
        assert_eq!(s.oni, -s.mi.tanh());
    }
    assert_eq!(report.summary.threshold, 0.0);
}

#[test]
fn calibration_reuse_reproduces_scores() {
    let train = common::gaussian_features(12, Split::Train, 40, &[(0, 5), (1, 3)]);
    let test = common::gaussian_features(13, Split::Test, 25, &[(0, 5), (1, 3)]);
    let cfg = AuditConfig::default();
    let (fresh, null) = audit(&train, &test, &cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calibration.json");
    null.save(&path).unwrap();
    let loaded = memaudit::NullCalibration::load(&path).unwrap();
    assert_eq!(loaded, null);

    let (reused, returned) = audit(&train, &test, &cfg, Some(&loaded)).unwrap();
    assert_eq!(returned, null);
    assert_eq!(fresh.mi(), reused.mi());
}

#[test]
fn permuting_test_rows_permutes_scores() {
    let train = common::gaussian_features(14, Split::Train, 40, &[(0, 5), (1, 3)]);
    let test = common::gaussian_features(15, Split::Test, 30, &[(0, 5), (1, 3)]);
    let cfg = AuditConfig::default();
    let (base, null) = audit(&train, &test, &cfg, None).unwrap();

    let perm: Vec<usize> = (0..30).rev().collect();
    let (shuffled, _) = audit(&train, &test.select(&perm), &cfg, Some(&null)).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(shuffled.samples[k].mi, base.samples[i].mi);
        assert_eq!(shuffled.samples[k].sample_id, base.samples[i].sample_id);
    }
}

#[test]
fn layer_mismatch_is_reported() {
    let train = common::gaussian_features(1, Split::Train, 10, &[(3, 2), (7, 2)]);
    let test = common::gaussian_features(1, Split::Test, 10, &[(3, 2), (11, 2)]);
    assert!(matches!(
        audit(&train, &test, &AuditConfig::default(), None),
        Err(Error::LayerMismatch { .. })
    ));
    let wide = common::gaussian_features(1, Split::Test, 10, &[(3, 2), (7, 5)]);
    assert!(matches!(
        audit(&train, &wide, &AuditConfig::default(), None),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn clean_injection_separates_duplicates_from_everything_else() {
    let corpus = generate(&SyntheticConfig {
        n: 200,
        size: 64,
        seed: 21,
    })
    .unwrap();
    let (test_imgs, plan) = inject_duplicates(
        &corpus.train,
        &corpus.test,
        0.30,
        memaudit::augment::AugmentationSpec::Clean,
        21,
    )
    .unwrap();
    let cfg = ReferenceEmbedderConfig::default();
    let train = embed_images(
        &corpus.train,
        DatasetManifest::numbered("syn", Split::Train, 100),
        &cfg,
    )
    .unwrap();
    let test = embed_images(&test_imgs, DatasetManifest::numbered("syn", Split::Test, 100), &cfg).unwrap();
    let (report, _) = audit(&train, &test, &AuditConfig::default(), None).unwrap();

    let (dup, other): (Vec<_>, Vec<_>) = report.samples.iter().zip(&plan.labels).partition(|(_, &l)| l);
    let min_dup_s = dup.iter().map(|(s, _)| s.s).fold(f64::INFINITY, f64::min);
    let max_other_s = other.iter().map(|(s, _)| s.s).fold(f64::NEG_INFINITY, f64::max);
    assert!(min_dup_s > max_other_s, "{min_dup_s} <= {max_other_s}");
    assert!(dup.iter().all(|(s, _)| (s.s - 1.0).abs() < 1e-5));

    // each duplicate points at its source in every layer
    for r in &plan.source_map {
        let s = &report.samples[r.test_index];
        assert_eq!(s.modal_neighbor, r.train_index);
        assert_eq!(s.consensus, 3);
    }

    // any ONI threshold between the two groups recovers the injected set
    let max_dup_oni = dup.iter().map(|(s, _)| s.oni).fold(f64::NEG_INFINITY, f64::max);
    let min_other_oni = other.iter().map(|(s, _)| s.oni).fold(f64::INFINITY, f64::min);
    assert!(max_dup_oni < min_other_oni, "{max_dup_oni} vs {min_other_oni}");
    let threshold = 0.5 * (max_dup_oni + min_other_oni);
    let flagged: Vec<bool> = report.samples.iter().map(|s| s.oni < threshold).collect();
    assert_eq!(flagged, plan.labels);
}

#[test]
fn horizontal_flip_permutes_grid_cells() {
    let img = blob_image(64, 3);
    let cfg = ReferenceEmbedderConfig {
        grids: vec![GridSpec { layer: 0, rows: 8, cols: 8 }, GridSpec { layer: 1, rows: 4, cols: 2 }],
        include_gradient_channel: false,
    };
    let a = embed_reference(&img, &cfg).unwrap();
    let b = embed_reference(&flip_h(&img), &cfg).unwrap();
    for g in &cfg.grids {
        for r in 0..g.rows {
            for c in 0..g.cols {
                let x = a[&g.layer][r * g.cols + c];
                let y = b[&g.layer][r * g.cols + (g.cols - 1 - c)];
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
