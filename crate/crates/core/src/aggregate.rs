//! Cross-layer fusion: geometric mean of per-layer similarities and the
//! neighbor-consensus diagnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedder::LayerId;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedScore {
    pub s: f64,
    pub d: f64,
    /// layer → (similarity before clamping, neighbor index)
    pub per_layer: BTreeMap<LayerId, (f64, usize)>,
    pub consensus: usize,
    /// Neighbor index chosen by the largest agreeing group of layers.
    pub modal_neighbor: usize,
    /// True if any layer similarity was negative and got clamped to 0.
    pub clamped: bool,
}

/// `s = exp(mean_k log(max(s_k, 0) + ε))`, `d = 1 − s`.
pub fn aggregate_scores(per_layer: &BTreeMap<LayerId, f64>, epsilon: f64) -> Result<(f64, f64)> {
    if per_layer.is_empty() {
        return Err(Error::Empty("per-layer scores"));
    }
    let k = per_layer.len() as f64;
    let log_sum: f64 = per_layer.values().map(|&s| (s.max(0.0) + epsilon).ln()).sum();
    let s = (log_sum / k).exp();
    Ok((s, 1.0 - s))
}

/// Size of the largest group of layers sharing one neighbor index, and that
/// index. Ties between groups go to the lower index.
pub fn consensus_count(neighbors: &BTreeMap<LayerId, usize>) -> (usize, usize) {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in neighbors.values() {
        *counts.entry(n).or_default() += 1;
    }
    let mut best = (0, 0);
    // BTreeMap iterates ascending, so strict `>` keeps the lowest index on ties.
    for (&idx, &c) in &counts {
        if c > best.0 {
            best = (c, idx);
        }
    }
    best
}

/// Full per-sample aggregation over layer `(score, neighbor)` pairs.
pub fn aggregate_sample(
    per_layer: BTreeMap<LayerId, (f64, usize)>,
    epsilon: f64,
) -> Result<AggregatedScore> {
    let scores: BTreeMap<_, _> = per_layer.iter().map(|(&k, &(s, _))| (k, s)).collect();
    let neighbors: BTreeMap<_, _> = per_layer.iter().map(|(&k, &(_, n))| (k, n)).collect();
    let (s, d) = aggregate_scores(&scores, epsilon)?;
    let (consensus, modal_neighbor) = consensus_count(&neighbors);
    let clamped = scores.values().any(|&v| v < 0.0);
    Ok(AggregatedScore {
        s,
        d,
        per_layer,
        consensus,
        modal_neighbor,
        clamped,
    })
}
