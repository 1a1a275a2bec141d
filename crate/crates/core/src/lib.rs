//! Stage-wise interest modelling with an editable interest list, group-aware
//! neighbor alignment, and a small trainable sequence recommender around
//! them, with a deterministic offline chat backend.
//!
//! The numeric modules are generic over [`Scalar`]; the aliases below fix
//! the scalar to `f64`, which is what the pipeline uses.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gaa;
pub mod hsu;
pub mod pipeline;
pub mod recommender;
pub mod scalar;
pub mod semantics;
pub mod synth;

pub use config::RunConfig;
pub use corpus::{Corpus, InteractionSequence, ItemId, SplitCorpus, UserId};
pub use error::{Error, Result};
pub use hsu::{EditKind, EditOperation, HsuConfig, HsuEngine, InterestState, InterestTrace, MockBackend};
pub use pipeline::{Pipeline, Stage};
pub use scalar::Scalar;

pub type SemanticEmbedding = semantics::SemanticEmbedding<f64>;
pub type EmbeddingStore = semantics::EmbeddingStore<f64>;
pub type NeighborSet = gaa::NeighborSet<f64>;
pub type EncoderParams = recommender::EncoderParams<f64>;
pub type BatchGradient = recommender::BatchGradient<f64>;
pub type TrainedModel = recommender::TrainedModel<f64>;
