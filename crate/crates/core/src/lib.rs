//! Unsupervised dialogue topic segmentation.
//!
//! Utterance embeddings (optionally computed over rewritten, self-contained
//! utterances) and coherence scores are combined into a per-gap relevance
//! series, and TextTiling picks boundaries from it. The [`ncum`] module
//! mines topic-similar and topic-dissimilar utterance pairs from
//! pseudo-segmentations and trains a projection head with a margin-ranking
//! loss. [`metrics`] provides Pk and WindowDiff.

pub mod dataio;
pub mod metrics;
pub mod ncum;
pub mod pipeline;
pub mod rewrite;
pub mod scoring;
pub mod segmenters;
pub mod synth;
pub mod types;

pub use metrics::{pk, window_diff, MetricKind, MetricResult};
pub use pipeline::{segment_corpus, segment_dialogue, Algorithm};
pub use types::{
    validate_dialogue, Dialogue, EmbeddingMatrix, RelevanceSeries, RunConfig, Segmentation, ThresholdPolicy, Utterance,
};
