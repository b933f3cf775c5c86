//! Two-branch confidence-aware re-ranking for clothes-changing video person
//! re-identification.
//!
//! Given precomputed appearance and gait embeddings, a query is first
//! ranked independently by each modality. The top candidates of both lists
//! are collected, connected into two cross-modal relation graphs, and a
//! small graph network estimates how much each modality's similarity should
//! be trusted for each candidate. The confidence-weighted similarities are
//! fused and the candidates re-ranked.
//!
//! Module map:
//!
//! * [`data`]: manifest and `CCVF` feature files
//! * [`synthetic`]: seeded benchmark generator
//! * [`ranking`]: distances, ranking lists, min-max similarity, candidates
//! * [`graph`]: candidate relation graphs
//! * [`net`]: encoder, GCN, heads, fusion, gradients, Adam
//! * [`loss`]: pseudo-labels, confidence and triplet losses
//! * [`trainer`]: leave-one-out training
//! * [`eval`]: test-time re-ranking, protocols, mAP / CMC
//! * [`checkpoint`]: model files

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod net;
pub mod pipeline;
pub mod ranking;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
