//! Memorization audit toolkit.
//!
//! Scores how close each test (generated) sample sits to its nearest
//! training sample across several feature scales, standardizes that score
//! against a bootstrap null built from the training set itself, and reports
//! a per-sample Memorization Index (MI) and its bounded companion, the
//! Overfit/Novelty Index (ONI = −tanh(MI)).
//!
//! Pipeline: [`embedder`] → [`whiten`] → [`similarity`] → [`aggregate`] →
//! [`calibrate`]. The evaluation harness ([`augment`], [`contaminate`],
//! [`baselines`], [`eval`]) injects known duplicates and measures detection.

pub mod aggregate;
pub mod augment;
pub mod baselines;
pub mod calibrate;
pub mod contaminate;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod rng;
pub mod similarity;
pub mod synthetic;
pub mod tensorio;
pub mod whiten;

pub use calibrate::{audit, AuditConfig, AuditReport, NullCalibration};
pub use embedder::{FeatureSet, LayerId, ReferenceEmbedderConfig};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use tensorio::{DatasetManifest, ImageSlice, Tensor};
