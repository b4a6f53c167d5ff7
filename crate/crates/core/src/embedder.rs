//! Per-layer pooled feature vectors.
//!
//! Two sources are supported: feature matrices produced elsewhere (one MATF
//! matrix per layer, rows in manifest order), and a deterministic reference
//! embedder that pools intensity and gradient statistics over a pyramid of
//! grids. Finer grids get smaller layer ids, so the ordering runs from local
//! texture to coarse structure.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensorio::{read_tensor, DatasetManifest, ImageSlice, Tensor};

pub type LayerId = u32;

/// One layer's spatial feature map, `channels × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer_id: LayerId,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        layer_id: LayerId,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels * height * width != values.len() {
            return Err(Error::ShapeMismatch {
                shape: vec![channels, height, width],
                expected: channels * height * width,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            layer_id,
            channels,
            height,
            width,
            values,
        })
    }
}

/// Global average pooling: channel `c` becomes the mean of its `h × w` plane.
pub fn pool_features(fm: &FeatureMap) -> Result<Vec<f64>> {
    let plane = fm.height * fm.width;
    if plane == 0 {
        return Err(Error::Empty("feature map spatial extent"));
    }
    Ok(fm
        .values
        .chunks_exact(plane)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect())
}

/// Per-layer feature matrices for one split. Every matrix has one row per
/// manifest sample, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub manifest: DatasetManifest,
    layers: BTreeMap<LayerId, Matrix>,
}

impl FeatureSet {
    pub fn new(manifest: DatasetManifest, layers: BTreeMap<LayerId, Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("feature layers"));
        }
        let n = manifest.len();
        for (&layer, m) in &layers {
            if m.nrows() != n {
                return Err(Error::RowMismatch {
                    layer,
                    expected: n,
                    found: m.nrows(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("feature matrix"));
            }
        }
        let mut manifest = manifest;
        manifest.layers = layers.keys().copied().collect();
        Ok(Self { manifest, layers })
    }

    pub fn n_samples(&self) -> usize {
        self.manifest.len()
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        self.layers.keys().copied().collect()
    }

    pub fn layer(&self, id: LayerId) -> Option<&Matrix> {
        self.layers.get(&id)
    }

    pub fn layers(&self) -> &BTreeMap<LayerId, Matrix> {
        &self.layers
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.manifest.sample_ids()
    }

    /// Row subset, preserving the given order.
    pub fn select(&self, idx: &[usize]) -> FeatureSet {
        let mut manifest = self.manifest.clone();
        manifest.samples = idx.iter().map(|&i| self.manifest.samples[i].clone()).collect();
        let layers = self
            .layers
            .iter()
            .map(|(&k, m)| (k, m.select_rows(idx)))
            .collect();
        FeatureSet { manifest, layers }
    }

    /// All layers side by side, one row per sample.
    pub fn concatenated(&self) -> Matrix {
        let n = self.n_samples();
        let width: usize = self.layers.values().map(Matrix::ncols).sum();
        let mut out = Matrix::zeros(n, width);
        for i in 0..n {
            let mut off = 0;
            let row = out.row_mut(i);
            for m in self.layers.values() {
                row[off..off + m.ncols()].copy_from_slice(m.row(i));
                off += m.ncols();
            }
        }
        out
    }
}

/// Reads one MATF matrix per layer listed in `manifest.layers`.
///
/// A layer's path comes from `manifest.features`, falling back to
/// `layer_<id>.matf`; relative paths resolve against `base_dir`.
pub fn load_external_features(manifest: &DatasetManifest, base_dir: &Path) -> Result<FeatureSet> {
    manifest.validate()?;
    if manifest.layers.is_empty() {
        return Err(Error::Empty("manifest layers"));
    }
    let mut layers = BTreeMap::new();
    for &layer in &manifest.layers {
        let rel = manifest
            .features
            .get(&layer)
            .cloned()
            .unwrap_or_else(|| format!("layer_{layer}.matf").into());
        let path = DatasetManifest::resolve(base_dir, &rel);
        if !path.is_file() {
            return Err(Error::MissingLayer(layer));
        }
        let t = read_tensor(&path)?;
        let shape = t.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::NotRank2(shape.len()));
        }
        if shape[0] != manifest.len() {
            return Err(Error::RowMismatch {
                layer,
                expected: manifest.len(),
                found: shape[0],
            });
        }
        let data = t.into_data().into_iter().map(f64::from).collect();
        layers.insert(layer, Matrix::from_vec(shape[0], shape[1], data)?);
    }
    FeatureSet::new(manifest.clone(), layers)
}

/// Converts a layer matrix to a float32 MATF tensor.
pub fn layer_tensor(m: &Matrix) -> Tensor {
    Tensor::new(
        vec![m.nrows(), m.ncols()],
        m.as_slice().iter().map(|&v| v as f32).collect(),
    )
    .expect("matrix shape is consistent")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layer: LayerId,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEmbedderConfig {
    pub grids: Vec<GridSpec>,
    pub include_gradient_channel: bool,
}

impl Default for ReferenceEmbedderConfig {
    fn default() -> Self {
        Self {
            grids: vec![
                GridSpec { layer: 3, rows: 16, cols: 16 },
                GridSpec { layer: 7, rows: 8, cols: 8 },
                GridSpec { layer: 11, rows: 4, cols: 4 },
            ],
            include_gradient_channel: false,
        }
    }
}

impl ReferenceEmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::InvalidConfig("embedder needs at least one grid".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for g in &self.grids {
            if g.rows == 0 || g.cols == 0 {
                return Err(Error::InvalidConfig(format!(
                    "grid for layer {} must be at least 1x1",
                    g.layer
                )));
            }
            if !ids.insert(g.layer) {
                return Err(Error::InvalidConfig(format!("duplicate layer id {}", g.layer)));
            }
        }
        Ok(())
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        let mut ids: Vec<_> = self.grids.iter().map(|g| g.layer).collect();
        ids.sort_unstable();
        ids
    }
}

/// Start offsets of `cells` equal ranges over `len`; the last range absorbs
/// the remainder.
fn cell_bounds(len: usize, cells: usize) -> Vec<(usize, usize)> {
    let step = len / cells;
    (0..cells)
        .map(|c| {
            let end = if c + 1 == cells { len } else { (c + 1) * step };
            (c * step, end)
        })
        .collect()
}

/// Forward-difference gradient magnitude per pixel. The last row and column
/// use a zero difference along the missing direction.
fn gradient_magnitude(img: &ImageSlice) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let p = img.get(r, c) as f64;
            let gx = if c + 1 < w { img.get(r, c + 1) as f64 - p } else { 0.0 };
            let gy = if r + 1 < h { img.get(r + 1, c) as f64 - p } else { 0.0 };
            out[r * w + c] = gx.hypot(gy);
        }
    }
    out
}

fn cell_means(values: &[f64], width: usize, rows: &[(usize, usize)], cols: &[(usize, usize)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &(r0, r1) in rows {
        for &(c0, c1) in cols {
            let mut acc = 0.0;
            for r in r0..r1 {
                acc += values[r * width + c0..r * width + c1].iter().sum::<f64>();
            }
            out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out
}

/// Multi-scale pooled statistics of one image, keyed by pseudo-layer id.
///
/// Each grid contributes its per-cell mean intensity (row-major), followed by
/// the per-cell mean gradient magnitude when enabled.
pub fn embed_reference(
    img: &ImageSlice,
    cfg: &ReferenceEmbedderConfig,
) -> Result<BTreeMap<LayerId, Vec<f64>>> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let intensity: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let gradient = cfg.include_gradient_channel.then(|| gradient_magnitude(img));

    let mut out = BTreeMap::new();
    for g in &cfg.grids {
        if h < g.rows || w < g.cols {
            return Err(Error::InvalidImage(format!(
                "{h}x{w} image is smaller than the {}x{} grid",
                g.rows, g.cols
            )));
        }
        let rows = cell_bounds(h, g.rows);
        let cols = cell_bounds(w, g.cols);
        let mut v = cell_means(&intensity, w, &rows, &cols);
        if let Some(grad) = &gradient {
            v.extend(cell_means(grad, w, &rows, &cols));
        }
        out.insert(g.layer, v);
    }
    Ok(out)
}

/// Embeds a batch of images into a [`FeatureSet`] aligned with `manifest`.
pub fn embed_images(
    images: &[ImageSlice],
    manifest: DatasetManifest,
    cfg: &ReferenceEmbedderConfig,
) -> Result<FeatureSet> {
    if images.len() != manifest.len() {
        return Err(Error::InvalidConfig(format!(
            "{} images for a manifest of {} samples",
            images.len(),
            manifest.len()
        )));
    }
    cfg.validate()?;
    let per_image: Vec<BTreeMap<LayerId, Vec<f64>>> = images
        .par_iter()
        .map(|img| embed_reference(img, cfg))
        .collect::<Result<_>>()?;

    let mut layers = BTreeMap::new();
    for id in cfg.layer_ids() {
        let dim = cfg
            .grids
            .iter()
            .find(|g| g.layer == id)
            .map(|g| g.rows * g.cols * if cfg.include_gradient_channel { 2 } else { 1 })
            .unwrap();
        let rows: Vec<&[f64]> = per_image.iter().map(|m| m[&id].as_slice()).collect();
        layers.insert(id, Matrix::from_rows(&rows, dim)?);
    }
    FeatureSet::new(manifest, layers)
}
