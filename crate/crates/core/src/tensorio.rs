//! Portable file formats: MATF tensors, PGM images and dataset manifests.
//!
//! MATF layout (all integers little-endian, no padding):
//!
//! ```text
//! "MATF" | version u8 = 0x01 | dtype u8 | ndim u8 | ndim × u64 dims | payload
//! ```
//!
//! Only dtype `0x01` (float32 LE) is defined.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::AuditReport;
use crate::error::{Error, Result};

pub const MATF_MAGIC: [u8; 4] = *b"MATF";
pub const MATF_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0x01,
}

impl Dtype {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0x01 => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn dtype(&self) -> Dtype {
        Dtype::F32
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let ndim = u8::try_from(t.shape.len()).expect("MATF supports at most 255 dimensions");
    let mut buf = Vec::with_capacity(7 + 8 * t.shape.len() + 4 * t.data.len());
    buf.extend_from_slice(&MATF_MAGIC);
    buf.push(MATF_VERSION);
    buf.push(t.dtype() as u8);
    buf.push(ndim);
    for &d in &t.shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let header = |n: usize| -> Result<&[u8]> {
        bytes.get(..n).ok_or(Error::Truncated {
            expected: n,
            found: bytes.len(),
        })
    };
    let head = header(7)?;
    let magic: [u8; 4] = head[..4].try_into().unwrap();
    if magic != MATF_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if head[4] != MATF_VERSION {
        return Err(Error::UnsupportedVersion(head[4]));
    }
    Dtype::from_code(head[5])?;
    let ndim = head[6] as usize;
    let dims_end = 7 + 8 * ndim;
    let dims = &header(dims_end)?[7..];
    let shape: Vec<usize> = dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();

    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidConfig(format!("tensor shape {shape:?} overflows")))?;
    let payload = &bytes[dims_end..];
    let expected = count * 4;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Writes `bytes` to a sibling temp file and renames it into place, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// One 2D grayscale slice, intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSlice {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageSlice {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                shape: vec![height, width],
                expected: height * width,
                found: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("pixel {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let pixels = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Reads a binary PGM (P5, maxval 255 or 65535) or a rank-2 MATF tensor.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageSlice> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageSlice> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&MATF_MAGIC) {
        let t = decode_tensor(bytes)?;
        if t.shape().len() != 2 {
            return Err(Error::NotRank2(t.shape().len()));
        }
        let (h, w) = (t.shape()[0], t.shape()[1]);
        ImageSlice::from_clamped(h, w, t.into_data())
    } else {
        Err(Error::UnsupportedFormat(
            "expected binary PGM (P5) or MATF".into(),
        ))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<ImageSlice> {
    // Header: "P5" whitespace width whitespace height whitespace maxval, then
    // exactly one whitespace byte before the raster. '#' starts a comment.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat("malformed PGM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::UnsupportedFormat("malformed PGM header".into()));
    }
    pos += 1;

    let [width, height, maxval] = fields;
    let sample_bytes = match maxval {
        255 => 1,
        65535 => 2,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PGM maxval {other} (only 255 and 65535 are supported)"
            )))
        }
    };
    let raster = &bytes[pos..];
    let expected = width * height * sample_bytes;
    if raster.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let scale = maxval as f32;
    let pixels = if sample_bytes == 1 {
        raster[..expected].iter().map(|&b| b as f32 / scale).collect()
    } else {
        // 16-bit PGM samples are big-endian per the Netpbm format.
        raster[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
            .collect()
    };
    ImageSlice::new(height, width, pixels)
}

/// Encodes an image as PGM P5. `sixteen_bit` selects maxval 65535.
pub fn encode_pgm(img: &ImageSlice, sixteen_bit: bool) -> Vec<u8> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    for &p in &img.pixels {
        let q = (p as f64 * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &ImageSlice, sixteen_bit: bool) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(img, sixteen_bit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub path: PathBuf,
}

/// `{name, split, layers: [int], samples: [{id, path}]}`.
///
/// For image manifests `samples[*].path` points at images and `layers` may be
/// empty. For feature manifests, `features` maps each layer id to the MATF
/// matrix holding that layer (rows in sample order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    #[serde(default)]
    pub layers: Vec<u32>,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub features: std::collections::BTreeMap<u32, PathBuf>,
}

impl DatasetManifest {
    /// Manifest of `n` samples with ids `<split>_0000, …` and matching
    /// `.pgm` paths.
    pub fn numbered(name: &str, split: Split, n: usize) -> Self {
        let tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        Self {
            name: name.to_string(),
            split,
            layers: vec![],
            samples: (0..n)
                .map(|i| SampleEntry {
                    id: format!("{tag}_{i:04}"),
                    path: PathBuf::from(format!("{tag}_{i:04}.pgm")),
                })
                .collect(),
            features: std::collections::BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "manifest {}: duplicate sample id {:?}",
                    self.name, s.id
                )));
            }
        }
        let mut layers = HashSet::new();
        for l in &self.layers {
            if !layers.insert(l) {
                return Err(Error::InvalidConfig(format!(
                    "manifest {}: duplicate layer id {l}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Resolves a path stored in the manifest relative to the manifest's
    /// own directory.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        write_atomic(path.as_ref(), &json)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Fixed leading CSV columns; one `neighbor_layer_<k>` column per layer
/// follows, in ascending layer order.
pub const REPORT_COLUMNS: [&str; 7] = ["sample_id", "s", "d", "mi", "oni", "flagged", "consensus"];

pub fn encode_report_csv(report: &AuditReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = REPORT_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(report.layers.iter().map(|k| format!("neighbor_layer_{k}")));
    w.write_record(&header)?;
    for s in &report.samples {
        let mut rec = vec![
            s.sample_id.clone(),
            s.s.to_string(),
            s.d.to_string(),
            s.mi.to_string(),
            s.oni.to_string(),
            s.flagged.to_string(),
            s.consensus.to_string(),
        ];
        for k in &report.layers {
            rec.push(s.per_layer.get(k).map(|&(_, n)| n.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<report buffer>", e.into_error()))
}

pub fn write_report(path: impl AsRef<Path>, report: &AuditReport, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Csv => encode_report_csv(report)?,
        ReportFormat::Json => serde_json::to_vec_pretty(report)?,
    };
    write_atomic(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_layout_is_exact() {
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        let bytes = encode_tensor(&t);
        let mut expected = b"MATF".to_vec();
        expected.extend_from_slice(&[0x01, 0x01, 0x01]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        // 0.5 = sign 0, exponent 126, mantissa 0 → 0x3F000000
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x3F]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn two_by_three_is_44_bytes() {
        let t = Tensor::new(vec![2, 3], (1..=6).map(|v| v as f32).collect()).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), 4 + 3 + 16 + 24);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn empty_tensor_round_trips() {
        let t = Tensor::new(vec![0], vec![]).unwrap();
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_tensor(&Tensor::new(vec![1], vec![1.0]).unwrap());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn rejects_short_payload() {
        let mut bytes = encode_tensor(&Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap());
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::Truncated {
                expected: 16,
                found: 12
            })
        ));
    }

    #[test]
    fn rejects_unknown_dtype() {
        let mut bytes = encode_tensor(&Tensor::new(vec![1], vec![1.0]).unwrap());
        bytes[5] = 0x07;
        assert!(matches!(decode_tensor(&bytes), Err(Error::UnknownDtype(7))));
    }

    #[test]
    fn tensor_new_checks_count() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn pgm_8bit_normalizes() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(
            img.pixels(),
            &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0][..]
        );
    }

    #[test]
    fn pgm_16bit_max_is_one() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF]);
        assert_eq!(decode_image(&bytes).unwrap().pixels(), &[1.0]);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n1 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.height(), img.width()), (2, 1));
    }

    #[test]
    fn pgm_other_maxval_rejected() {
        let mut bytes = b"P5\n1 1\n1023\n".to_vec();
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(
            decode_image(&bytes),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn matf_image_is_clamped() {
        let t = Tensor::new(vec![4, 4], vec![0.5; 16]).unwrap();
        let img = decode_image(&encode_tensor(&t)).unwrap();
        assert_eq!((img.height(), img.width()), (4, 4));
        assert!(img.pixels().iter().all(|&p| p == 0.5));

        let t = Tensor::new(vec![1, 2], vec![-1.0, 3.0]).unwrap();
        assert_eq!(decode_image(&encode_tensor(&t)).unwrap().pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn matf_rank3_is_not_an_image() {
        let t = Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            decode_image(&encode_tensor(&t)),
            Err(Error::NotRank2(3))
        ));
    }

    #[test]
    fn unknown_image_format() {
        assert!(matches!(
            decode_image(b"GIF89a"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn pgm_round_trip_16bit() {
        let img = ImageSlice::new(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
        let back = decode_image(&encode_pgm(&img, true)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn image_invariants() {
        assert!(ImageSlice::new(0, 1, vec![]).is_err());
        assert!(ImageSlice::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn manifest_duplicate_ids_rejected() {
        let m = DatasetManifest {
            name: "x".into(),
            split: Split::Train,
            layers: vec![],
            samples: vec![
                SampleEntry {
                    id: "a".into(),
                    path: "a.pgm".into(),
                },
                SampleEntry {
                    id: "a".into(),
                    path: "b.pgm".into(),
                },
            ],
            features: Default::default(),
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let json = r#"{"name":"d","split":"test","layers":[3,7,11],
                       "samples":[{"id":"s0","path":"s0.pgm"}]}"#;
        let m: DatasetManifest = serde_json::from_str(json).unwrap();
        assert_eq!(m.split, Split::Test);
        assert_eq!(m.layers, vec![3, 7, 11]);
        assert_eq!(m.samples[0].id, "s0");
    }
}
