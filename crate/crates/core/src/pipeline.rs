//! Two-stage segmentation: score gaps, then select boundaries.

use rayon::prelude::*;
use thiserror::Error;

use crate::scoring::{relevance_series, CoherenceProvider, EmbeddingProvider, Relevance, ScoringError};
use crate::segmenters::{dialogue_rng, greedy_segment, mean_adjacent_cosine, random_segment, texttiling, SegmentError};
use crate::types::{ConfigError, Dialogue, RunConfig, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    TextTiling,
    /// Adjacent-cosine thresholding; `None` uses the dialogue's mean adjacent
    /// cosine.
    Greedy {
        tau: Option<f64>,
    },
    Random,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::TextTiling => "texttiling",
            Algorithm::Greedy { .. } => "greedy",
            Algorithm::Random => "random",
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        !matches!(self, Algorithm::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("algorithm `{0}` requires embeddings")]
    MissingEmbeddings(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dialogue `{id}`: {source}")]
    Scoring {
        id: String,
        #[source]
        source: ScoringError,
    },
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput {
    pub id: String,
    pub segmentation: Segmentation,
    /// Present for TextTiling on dialogues with at least one gap.
    pub relevance: Option<Relevance>,
}

pub fn segment_dialogue(
    d: &Dialogue,
    embeddings: Option<&dyn EmbeddingProvider>,
    coherence: &dyn CoherenceProvider,
    cfg: &RunConfig,
    algo: Algorithm,
) -> Result<SegmentOutput, PipelineError> {
    let scoring = |source| PipelineError::Scoring {
        id: d.id.clone(),
        source,
    };
    let out = |segmentation, relevance| SegmentOutput {
        id: d.id.clone(),
        segmentation,
        relevance,
    };
    if algo.needs_embeddings() && embeddings.is_none() {
        return Err(PipelineError::MissingEmbeddings(algo.name()));
    }
    match algo {
        Algorithm::Random => {
            let mut rng = dialogue_rng(cfg.seed, &d.id);
            Ok(out(random_segment(d.len(), &mut rng), None))
        }
        Algorithm::Greedy { tau } => {
            let e = embeddings.unwrap().embed(d).map_err(scoring)?;
            let tau = tau.unwrap_or_else(|| mean_adjacent_cosine(&e));
            Ok(out(greedy_segment(&e, tau), None))
        }
        Algorithm::TextTiling => {
            let e = embeddings.unwrap().embed(d).map_err(scoring)?;
            if d.len() < 2 {
                return Ok(out(Segmentation::whole(d.len().max(1)), None));
            }
            let c = coherence.coherence(d).map_err(scoring)?;
            let rel = relevance_series(&e, &c, cfg.coherence_weight).map_err(scoring)?;
            let seg = texttiling(&rel.series, cfg)?;
            Ok(out(seg, Some(rel)))
        }
    }
}

/// Segments every dialogue in parallel; output is sorted by dialogue id.
pub fn segment_corpus(
    dialogues: &[Dialogue],
    embeddings: Option<&dyn EmbeddingProvider>,
    coherence: &dyn CoherenceProvider,
    cfg: &RunConfig,
    algo: Algorithm,
) -> Result<Vec<SegmentOutput>, PipelineError> {
    cfg.validate()?;
    let mut out: Vec<SegmentOutput> = dialogues
        .par_iter()
        .map(|d| segment_dialogue(d, embeddings, coherence, cfg, algo))
        .collect::<Result<_, _>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
