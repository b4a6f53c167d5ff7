//! Perturbations applied to injected duplicates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::ImageSlice;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentationSpec {
    Clean,
    Noise { sigma: f64 },
    /// Rotation by `±degrees`; the sign is drawn per image.
    Rotate { degrees: f64 },
    FlipH,
    FlipV,
    Intensity { lo: f64, hi: f64 },
}

impl AugmentationSpec {
    /// The eight evaluation conditions: clean, two noise levels, two
    /// rotation magnitudes, both flips and intensity scaling.
    pub fn standard_grid() -> Vec<AugmentationSpec> {
        vec![
            AugmentationSpec::Clean,
            AugmentationSpec::Noise { sigma: 0.01 },
            AugmentationSpec::Noise { sigma: 0.02 },
            AugmentationSpec::Rotate { degrees: 3.0 },
            AugmentationSpec::Rotate { degrees: 5.0 },
            AugmentationSpec::FlipH,
            AugmentationSpec::FlipV,
            AugmentationSpec::Intensity { lo: 0.9, hi: 1.1 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentationSpec::Noise { sigma } => sigma > 0.0 && sigma.is_finite(),
            AugmentationSpec::Rotate { degrees } => degrees.is_finite() && degrees.abs() < 90.0,
            AugmentationSpec::Intensity { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid augmentation {self}")))
        }
    }

    pub fn apply(&self, img: &ImageSlice, seed: u64) -> ImageSlice {
        match *self {
            AugmentationSpec::Clean => img.clone(),
            AugmentationSpec::Noise { sigma } => add_gaussian_noise(img, sigma, seed),
            AugmentationSpec::Rotate { degrees } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                rotate(img, sign * degrees)
            }
            AugmentationSpec::FlipH => flip_h(img),
            AugmentationSpec::FlipV => flip_v(img),
            AugmentationSpec::Intensity { lo, hi } => scale_intensity(img, (lo, hi), seed),
        }
    }

    /// Whether the perturbation keeps pixel geometry in place.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self,
            AugmentationSpec::Rotate { .. } | AugmentationSpec::FlipH | AugmentationSpec::FlipV
        )
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AugmentationSpec::Clean => f.write_str("clean"),
            AugmentationSpec::Noise { sigma } => write!(f, "noise_{sigma}"),
            AugmentationSpec::Rotate { degrees } => write!(f, "rot_{degrees}"),
            AugmentationSpec::FlipH => f.write_str("flip_h"),
            AugmentationSpec::FlipV => f.write_str("flip_v"),
            AugmentationSpec::Intensity { lo, hi } if lo == 0.9 && hi == 1.1 => f.write_str("intensity"),
            AugmentationSpec::Intensity { lo, hi } => write!(f, "intensity_{lo}_{hi}"),
        }
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown augmentation tag {s:?}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let spec = match s {
            "clean" => AugmentationSpec::Clean,
            "flip_h" => AugmentationSpec::FlipH,
            "flip_v" => AugmentationSpec::FlipV,
            "intensity" => AugmentationSpec::Intensity { lo: 0.9, hi: 1.1 },
            _ => {
                if let Some(v) = s.strip_prefix("noise_") {
                    AugmentationSpec::Noise { sigma: num(v)? }
                } else if let Some(v) = s.strip_prefix("rot_") {
                    AugmentationSpec::Rotate { degrees: num(v)? }
                } else if let Some(v) = s.strip_prefix("intensity_") {
                    let (lo, hi) = v.split_once('_').ok_or_else(bad)?;
                    AugmentationSpec::Intensity {
                        lo: num(lo)?,
                        hi: num(hi)?,
                    }
                } else {
                    return Err(bad());
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for AugmentationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AugmentationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn map_pixels(img: &ImageSlice, f: impl FnMut(f32) -> f32) -> ImageSlice {
    let px = img.pixels().iter().copied().map(f).collect();
    ImageSlice::from_clamped(img.height(), img.width(), px).expect("shape preserved")
}

/// Adds i.i.d. N(0, σ²) noise per pixel, then clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &ImageSlice, sigma: f64, seed: u64) -> ImageSlice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    map_pixels(img, |p| (p as f64 + normal.sample(&mut rng)) as f32)
}

/// Rotates about the image center with bilinear sampling. Source positions
/// outside the image read as 0. Positive angles turn the content
/// counter-clockwise in (row-down) image coordinates.
pub fn rotate(img: &ImageSlice, degrees: f64) -> ImageSlice {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img.get(r as usize, c as usize) as f64
        }
    };

    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let x = c as f64 - cx;
            let y = r as f64 - cy;
            // inverse mapping: rotate the output position back by the angle
            let sx = cos * x - sin * y + cx;
            let sy = sin * x + cos * y + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out.push(v as f32);
        }
    }
    ImageSlice::from_clamped(h, w, out).expect("shape preserved")
}

pub fn flip_h(img: &ImageSlice) -> ImageSlice {
    let w = img.width();
    let px = img
        .pixels()
        .chunks_exact(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    ImageSlice::new(img.height(), w, px).expect("shape preserved")
}

pub fn flip_v(img: &ImageSlice) -> ImageSlice {
    let w = img.width();
    let px = img
        .pixels()
        .chunks_exact(w)
        .rev()
        .flatten()
        .copied()
        .collect();
    ImageSlice::new(img.height(), w, px).expect("shape preserved")
}

/// Multiplies every pixel by one factor and clamps.
pub fn scale_by(img: &ImageSlice, factor: f64) -> ImageSlice {
    map_pixels(img, |p| (p as f64 * factor) as f32)
}

/// Draws one factor uniformly from `range` and applies [`scale_by`].
pub fn scale_intensity(img: &ImageSlice, range: (f64, f64), seed: u64) -> ImageSlice {
    let (lo, hi) = range;
    let factor = if lo == hi {
        lo
    } else {
        ChaCha8Rng::seed_from_u64(seed).random_range(lo..=hi)
    };
    scale_by(img, factor)
}
