//! Gap relevance from utterance embeddings and coherence scores.
//!
//! For gap `i` the relevance is the cosine between the mean of rows
//! `{i-1, i}` and the mean of rows `{i+1, i+2}`, plus `lambda * c_i`. Windows
//! are clamped to `[1, n]` at the dialogue edges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Dialogue, EmbeddingMatrix, NonFiniteScore, RelevanceSeries};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("gap {gap} out of range [1, {max}]")]
    GapOutOfRange { gap: usize, max: usize },
    #[error("need at least 2 utterances to score gaps, got {0}")]
    TooShort(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no cached entry for dialogue `{0}`")]
    MissingEntry(String),
    #[error("dialogue `{id}` has {dialogue} utterances but cache entry has {cache}")]
    CacheShapeMismatch { id: String, dialogue: usize, cache: usize },
    #[error(transparent)]
    NonFinite(#[from] NonFiniteScore),
}

/// Cosine similarity plus a flag set when either input has (near) zero norm,
/// in which case the value is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_flagged(a: &[f64], b: &[f64]) -> Result<Cosine, ScoringError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ScoringError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ScoringError> {
    cosine_flagged(a, b).map(|c| c.value)
}

fn window_mean(e: &EmbeddingMatrix, lo: usize, hi: usize) -> Vec<f64> {
    let mut acc = vec![0.0; e.d()];
    for i in lo..=hi {
        for (a, v) in acc.iter_mut().zip(e.row(i)) {
            *a += v;
        }
    }
    let count = (hi - lo + 1) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    acc
}

pub fn topic_similarity_flagged(e: &EmbeddingMatrix, gap: usize) -> Result<Cosine, ScoringError> {
    let n = e.n();
    if n < 2 {
        return Err(ScoringError::TooShort(n));
    }
    if gap == 0 || gap > n - 1 {
        return Err(ScoringError::GapOutOfRange { gap, max: n - 1 });
    }
    let left = window_mean(e, gap.saturating_sub(1).max(1), gap);
    let right = window_mean(e, gap + 1, (gap + 2).min(n));
    cosine_flagged(&left, &right)
}

pub fn topic_similarity(e: &EmbeddingMatrix, gap: usize) -> Result<f64, ScoringError> {
    topic_similarity_flagged(e, gap).map(|c| c.value)
}

/// Per-gap coherence `c_1..c_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSeries {
    values: Vec<f64>,
}

impl CoherenceSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, NonFiniteScore> {
        if let Some((g, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NonFiniteScore { gap: g + 1, value: v });
        }
        let outside = values.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if outside > 0 {
            log::warn!("{outside} coherence values fall outside [0, 1]");
        }
        Ok(Self { values })
    }

    pub fn zeros(gaps: usize) -> Self {
        Self {
            values: vec![0.0; gaps],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A relevance series with the gaps whose similarity hit a zero-norm window.
#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub series: RelevanceSeries,
    pub zero_norm_gaps: Vec<usize>,
}

pub fn relevance_series(e: &EmbeddingMatrix, c: &CoherenceSeries, lambda: f64) -> Result<Relevance, ScoringError> {
    let gaps = e.n().saturating_sub(1);
    if c.len() != gaps {
        return Err(ScoringError::LengthMismatch {
            expected: gaps,
            got: c.len(),
        });
    }
    if gaps == 0 {
        return Err(ScoringError::TooShort(e.n()));
    }
    let mut scores = Vec::with_capacity(gaps);
    let mut zero_norm_gaps = Vec::new();
    for g in 1..=gaps {
        let sim = topic_similarity_flagged(e, g)?;
        if sim.degenerate {
            zero_norm_gaps.push(g);
        }
        scores.push(sim.value + lambda * c.values()[g - 1]);
    }
    if !zero_norm_gaps.is_empty() {
        log::debug!("zero-norm windows at gaps {zero_norm_gaps:?}");
    }
    Ok(Relevance {
        series: RelevanceSeries::new(scores)?,
        zero_norm_gaps,
    })
}

/// Produces one embedding row per utterance of a dialogue.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, dialogue: &Dialogue) -> Result<EmbeddingMatrix, ScoringError>;
}

pub trait CoherenceProvider: Send + Sync {
    fn coherence(&self, dialogue: &Dialogue) -> Result<CoherenceSeries, ScoringError>;
}

/// All-zero coherence, for pure-similarity scoring.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCoherence;

impl CoherenceProvider for ZeroCoherence {
    fn coherence(&self, dialogue: &Dialogue) -> Result<CoherenceSeries, ScoringError> {
        Ok(CoherenceSeries::zeros(dialogue.gap_count()))
    }
}

/// Embeddings looked up by dialogue id, typically loaded from a cache file.
#[derive(Debug, Clone, Default)]
pub struct CachedEmbeddings {
    entries: BTreeMap<String, EmbeddingMatrix>,
}

impl CachedEmbeddings {
    pub fn new(entries: BTreeMap<String, EmbeddingMatrix>) -> Self {
        Self { entries }
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingMatrix> {
        self.entries.get(id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(EmbeddingMatrix::d)
    }
}

impl EmbeddingProvider for CachedEmbeddings {
    fn embed(&self, dialogue: &Dialogue) -> Result<EmbeddingMatrix, ScoringError> {
        let m = self
            .entries
            .get(&dialogue.id)
            .ok_or_else(|| ScoringError::MissingEntry(dialogue.id.clone()))?;
        if m.n() != dialogue.len() {
            return Err(ScoringError::CacheShapeMismatch {
                id: dialogue.id.clone(),
                dialogue: dialogue.len(),
                cache: m.n(),
            });
        }
        Ok(m.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CachedCoherence {
    entries: BTreeMap<String, CoherenceSeries>,
}

impl CachedCoherence {
    pub fn new(entries: BTreeMap<String, CoherenceSeries>) -> Self {
        Self { entries }
    }
}

impl CoherenceProvider for CachedCoherence {
    fn coherence(&self, dialogue: &Dialogue) -> Result<CoherenceSeries, ScoringError> {
        let c = self
            .entries
            .get(&dialogue.id)
            .ok_or_else(|| ScoringError::MissingEntry(dialogue.id.clone()))?;
        if c.len() != dialogue.gap_count() {
            return Err(ScoringError::LengthMismatch {
                expected: dialogue.gap_count(),
                got: c.len(),
            });
        }
        Ok(c.clone())
    }
}

/// Deterministic feature-hashing embedder over lowercase whitespace tokens.
///
/// Each token adds a signed unit to one of `dim` buckets. Utterances sharing
/// vocabulary get correlated rows, so lexical rewrites change similarity the
/// way an encoder would, only coarser.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbeddings {
    pub dim: usize,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in text.split_whitespace() {
            let tok: String = tok
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            if tok.is_empty() {
                continue;
            }
            let h = fnv1a(tok.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbeddings {
    fn embed(&self, dialogue: &Dialogue) -> Result<EmbeddingMatrix, ScoringError> {
        let values: Vec<f64> = dialogue
            .resolved_texts()
            .into_iter()
            .flat_map(|t| self.embed_text(t))
            .collect();
        Ok(
            EmbeddingMatrix::new(dialogue.len(), self.dim, values)
                .expect("hashing embeddings are finite with dim >= 1"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_and_mismatch() {
        let c = cosine_flagged(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(
            c,
            Cosine {
                value: 0.0,
                degenerate: true
            }
        );
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(ScoringError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn topic_similarity_examples() {
        let flat = mat(&[&[0.3, 0.4][..]; 4]);
        for g in 1..=3 {
            assert!((topic_similarity(&flat, g).unwrap() - 1.0).abs() < 1e-12);
        }
        let split = mat(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(topic_similarity(&split, 2).unwrap(), 0.0);

        let two = mat(&[&[1.0, 2.0], &[3.0, -1.0]]);
        assert_eq!(
            topic_similarity(&two, 1).unwrap(),
            cosine(two.row(1), two.row(2)).unwrap()
        );
        assert!(matches!(
            topic_similarity(&two, 2),
            Err(ScoringError::GapOutOfRange { gap: 2, max: 1 })
        ));
    }

    #[test]
    fn relevance_examples() {
        let flat = mat(&[&[1.0, 1.0][..]; 4]);
        let r = relevance_series(&flat, &CoherenceSeries::zeros(3), 1.0).unwrap();
        assert!(r.series.scores().iter().all(|s| (s - 1.0).abs() < 1e-12));

        let split = mat(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let c = CoherenceSeries::new(vec![0.5, 0.5, 0.5]).unwrap();
        let r = relevance_series(&split, &c, 1.0).unwrap();
        assert_eq!(r.series.at(2), 0.5);

        let r0 = relevance_series(&split, &c, 0.0).unwrap();
        for g in 1..=3 {
            assert_eq!(r0.series.at(g), topic_similarity(&split, g).unwrap());
        }
        assert!(matches!(
            relevance_series(&split, &CoherenceSeries::zeros(2), 1.0),
            Err(ScoringError::LengthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn zero_rows_flagged() {
        let m = mat(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]]);
        let r = relevance_series(&m, &CoherenceSeries::zeros(2), 1.0).unwrap();
        assert_eq!(r.zero_norm_gaps, vec![1, 2]);
        assert!(r.series.scores().iter().all(|s| s.is_finite()));
    }

    #[test]
    fn providers() {
        let d = Dialogue::from_texts("x", ["the cat sat", "the cat sat", "stock prices"]);
        let h = HashingEmbeddings::new(32);
        let e = h.embed(&d).unwrap();
        assert_eq!(e.row(1), e.row(2));
        assert_eq!((e.n(), e.d()), (3, 32));

        let z = ZeroCoherence.coherence(&d).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0]);

        let cache = CachedEmbeddings::new(BTreeMap::from([("y".to_string(), e.clone())]));
        assert!(matches!(cache.embed(&d), Err(ScoringError::MissingEntry(_))));
    }

    fn arb_matrix() -> impl Strategy<Value = EmbeddingMatrix> {
        (2usize..12, 1usize..6).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| EmbeddingMatrix::new(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn scale_invariant(e in arb_matrix(), c in 0.01f64..100.0) {
            let scaled = e.scaled(c);
            for g in 1..e.n() {
                let a = topic_similarity(&e, g).unwrap();
                let b = topic_similarity(&scaled, g).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn linear_in_coherence(e in arb_matrix(), seed in proptest::collection::vec(-1.0f64..1.0, 22)) {
            let gaps = e.n() - 1;
            let c1 = CoherenceSeries::new(seed[..gaps].to_vec()).unwrap();
            let c2 = CoherenceSeries::new(seed[11..11 + gaps].to_vec()).unwrap();
            let sum = CoherenceSeries::new(c1.values().iter().zip(c2.values()).map(|(a, b)| a + b).collect()).unwrap();
            let s12 = relevance_series(&e, &sum, 1.0).unwrap().series;
            let s1 = relevance_series(&e, &c1, 1.0).unwrap().series;
            let s2 = relevance_series(&e, &c2, 1.0).unwrap().series;
            let topic = relevance_series(&e, &CoherenceSeries::zeros(gaps), 1.0).unwrap().series;
            for g in 1..=gaps {
                prop_assert!((s12.at(g) - (s1.at(g) + s2.at(g) - topic.at(g))).abs() < 1e-12);
            }
        }
    }
}
