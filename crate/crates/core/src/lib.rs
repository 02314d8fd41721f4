//! Open-set embedding gallery engine.
//!
//! Embeddings produced by a metric-learning model are stored in a [`Gallery`]
//! and queries are matched against them with a distance threshold: anything
//! farther than the threshold from every stored embedding comes back as
//! unknown rather than being forced into the nearest class.
//!
//! The crate is organised around that pipeline:
//!
//! - [`metrics`]: the [`Embedding`] type and the distance functions.
//! - [`losses`]: contrastive, triplet and quadruplet losses with analytic gradients.
//! - [`trainer`]: a linear toy embedder trained by SGD with triplet mining.
//! - [`gallery`]: threshold queries, per-class capping, MAD pruning, adaptive
//!   thresholds and a log-structured file format with tombstones.
//! - [`conditioning`]: auxiliary-variable saliency, per-class clustering and
//!   conditioned queries.
//! - [`projection`]: PCA for latent-space inspection and CSV export.
//! - [`simbench`]: a synthetic world with a background variable and an
//!   evaluation harness comparing conditioned and unconditioned matching.

pub mod conditioning;
pub mod error;
pub mod gallery;
mod jsonl;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod projection;
pub mod simbench;
pub mod trainer;

pub use conditioning::{AuxSchema, ClusterModel, ConditionMode, SaliencyReport};
pub use error::{Error, Result};
pub use gallery::{Gallery, GalleryConfig, GalleryRecord, Label, NewRecord, QueryResult};
pub use jsonl::write_atomic;
pub use metrics::{distance, normalize, Embedding, InverseCovariance, Metric};
pub use projection::ProjectionModel;
pub use simbench::{BenchReport, SyntheticSpec};
pub use trainer::{ToyEmbedder, TrainConfig, TrainSample};
