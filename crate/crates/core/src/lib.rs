//! Cross-modality deep metric learning with modality-aware triplet hard mining.
//!
//! The crate trains small embedders on two-modality data (sketch and photo) with
//! three batch-hard triplet losses (cross-modality, within-modality and hybrid)
//! combined by a closed-form gradient-balancing weight, co-trained with a softmax
//! classifier. It also ships the zero-shot retrieval metrics and modality-gap
//! diagnostics used to compare training variants.
//!
//! Module map:
//! - [`embedding`]: normalization, distances, cosine matrices and a finite-difference checker.
//! - [`data`]: synthetic generator, zero-shot splits, CSV I/O and the PK batch sampler.
//! - [`mining`]: batch-hard triplet selection for the three triplet kinds.
//! - [`losses`]: classification, triplet, weighting and adversarial losses with analytic gradients.
//! - [`model`]: embedder, heads, Adam, cosine schedule and the training loop.
//! - [`eval`]: retrieval ranking, mAP / precision and embedding-space diagnostics.
//! - [`experiment`]: run configuration and the train/eval/diagnose/ablate/sweep drivers.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod data;
pub mod embedding;
mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod mining;
pub mod model;

pub use error::{Error, Result};

pub use data::{Dataset, Modality, SampleRecord};
pub use embedding::{DistanceMatrix, EmbeddingBatch};
pub use losses::{LossConfig, LossReport, WeightedLossBundle};
pub use mining::{Triplet, TripletKind};
