//! Procedural grayscale corpus: smooth images built from sums of random
//! Gaussian bumps. Pixels are quantized to the 16-bit PGM grid so a corpus
//! survives a write/read cycle bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensorio::ImageSlice;

/// Two generated images must differ somewhere by more than this.
pub const MIN_PIXEL_SEPARATION: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            size: 128,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<ImageSlice>,
    pub test: Vec<ImageSlice>,
}

fn quantize16(v: f64) -> f32 {
    (v * 65535.0).round() as f32 / 65535.0
}

/// One image from its own seed.
pub fn blob_image(size: usize, seed: u64) -> ImageSlice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let n_bumps = rng.random_range(4..=9);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let cy = rng.random_range(0.1 * s..0.9 * s);
            let cx = rng.random_range(0.1 * s..0.9 * s);
            let width = rng.random_range(s / 20.0..s / 5.0);
            let amp = rng.random_range(0.2..1.0) * if rng.random_bool(0.2) { -0.5 } else { 1.0 };
            (cy, cx, 2.0 * width * width, amp)
        })
        .collect();
    // gentle linear shading so images also differ at low frequency
    let gy = rng.random_range(-0.3..0.3) / s;
    let gx = rng.random_range(-0.3..0.3) / s;

    let mut raw = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64, c as f64);
            let mut v = gy * y + gx * x;
            for &(cy, cx, two_w2, amp) in &bumps {
                v += amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / two_w2).exp();
            }
            raw.push(v);
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let px = raw.into_iter().map(|v| quantize16((v - lo) / span)).collect();
    ImageSlice::new(size, size, px).expect("normalized to [0, 1]")
}

fn too_close(a: &ImageSlice, b: &ImageSlice) -> bool {
    !a.pixels()
        .iter()
        .zip(b.pixels())
        .any(|(x, y)| (x - y).abs() > MIN_PIXEL_SEPARATION)
}

/// Generates `n` images; the first `n/2` form the train split, the rest the
/// test split. Any image too close to an earlier one is regenerated from the
/// next attempt seed.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.n < 2 {
        return Err(Error::InvalidConfig("need at least 2 images".into()));
    }
    if cfg.size < 4 {
        return Err(Error::InvalidConfig("image size must be at least 4".into()));
    }
    let mut images: Vec<ImageSlice> = (0..cfg.n)
        .into_par_iter()
        .map(|i| blob_image(cfg.size, derive_seed(cfg.seed, i as u64)))
        .collect();

    for i in 1..images.len() {
        let mut attempt = 0u64;
        while images[..i].iter().any(|prev| too_close(prev, &images[i])) {
            attempt += 1;
            if attempt > 100 {
                return Err(Error::InvalidConfig(
                    "could not generate distinct images; increase size".into(),
                ));
            }
            let seed = derive_seed(derive_seed(cfg.seed, i as u64), attempt);
            images[i] = blob_image(cfg.size, seed);
        }
    }

    let test = images.split_off(cfg.n / 2);
    Ok(SyntheticCorpus {
        train: images,
        test,
    })
}
