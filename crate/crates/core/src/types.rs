//! Domain vocabulary shared by every stage of the pipeline.
//!
//! Indices are 1-based at every public boundary: utterances are numbered
//! `1..=n` and gaps `1..=n-1`, where gap `b` sits between utterance `b` and
//! utterance `b + 1`. Storage is 0-based internally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default neighbor half-window.
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("dialogue `{0}` has no utterances")]
    EmptyDialogue(String),
    #[error("dialogue `{id}`: utterance {index} is empty")]
    EmptyUtterance { id: String, index: usize },
    #[error("dialogue `{id}`: rewrite of utterance {index} is empty")]
    EmptyRewrite { id: String, index: usize },
    #[error("dialogue `{id}`: utterance at position {position} carries index {found}")]
    IndexMismatch { id: String, position: usize, found: usize },
    #[error("boundary {boundary} out of range [1, {max}] for n = {n}")]
    BoundaryOutOfRange { boundary: usize, n: usize, max: usize },
    #[error("duplicate boundary {0}")]
    DuplicateBoundary(usize),
    #[error("segmentation refers to n = {segmentation} but dialogue has {dialogue} utterances")]
    LengthMismatch { segmentation: usize, dialogue: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("neighbor window w must be >= 1")]
    ZeroWindow,
    #[error("margin must be > 0, got {0}")]
    NonPositiveMargin(f64),
    #[error("smoothing width must be odd and >= 1, got {0}")]
    BadSmoothingWidth(usize),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
}

/// A single turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Option<String>,
    pub text: String,
    pub rewritten: Option<String>,
}

impl Utterance {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Self {
            index,
            speaker: None,
            text: text.into(),
            rewritten: None,
        }
    }

    /// Rewritten text if present, else the original.
    pub fn resolved_text(&self) -> &str {
        self.rewritten.as_deref().unwrap_or(&self.text)
    }
}

/// Topic boundaries over a dialogue of `n` utterances.
///
/// Boundaries are gap indices in `[1, n-1]`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation {
    n: usize,
    boundaries: Vec<usize>,
}

impl Segmentation {
    /// Validates `boundaries` against `n`. Input need not be sorted, but must
    /// not contain duplicates.
    pub fn new(n: usize, mut boundaries: Vec<usize>) -> Result<Self, DialogueError> {
        let max = n.saturating_sub(1);
        boundaries.sort_unstable();
        for (pos, &b) in boundaries.iter().enumerate() {
            if b == 0 || b > max {
                return Err(DialogueError::BoundaryOutOfRange { boundary: b, n, max });
            }
            if pos > 0 && boundaries[pos - 1] == b {
                return Err(DialogueError::DuplicateBoundary(b));
            }
        }
        Ok(Self { n, boundaries })
    }

    /// A single segment spanning all `n` utterances.
    pub fn whole(n: usize) -> Self {
        Self {
            n,
            boundaries: Vec::new(),
        }
    }

    /// Builds from a per-gap boundary mask; `mask[g]` is gap `g + 1`.
    pub fn from_gap_mask(mask: &[bool]) -> Self {
        let boundaries = mask
            .iter()
            .enumerate()
            .filter_map(|(g, &on)| on.then_some(g + 1))
            .collect();
        Self {
            n: mask.len() + 1,
            boundaries,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn gap_count(&self) -> usize {
        self.n.saturating_sub(1)
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn is_boundary(&self, gap: usize) -> bool {
        self.boundaries.binary_search(&gap).is_ok()
    }

    /// 0-based segment ordinal of 1-based utterance `u`.
    pub fn segment_of(&self, u: usize) -> usize {
        // boundary b separates utterance b from b + 1, so u is past every b < u
        self.boundaries.partition_point(|&b| b < u)
    }

    /// Segment ordinal for every utterance, 0-based storage.
    pub fn segment_ids(&self) -> Vec<usize> {
        (1..=self.n).map(|u| self.segment_of(u)).collect()
    }

    /// Inclusive 1-based utterance ranges of each segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.segment_count());
        let mut start = 1;
        for &b in &self.boundaries {
            out.push((start, b));
            start = b + 1;
        }
        if self.n > 0 {
            out.push((start, self.n));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub gold: Option<Segmentation>,
}

impl Dialogue {
    /// Builds a dialogue from plain strings, numbering utterances `1..=n`.
    pub fn from_texts<S: Into<String>>(id: impl Into<String>, texts: impl IntoIterator<Item = S>) -> Self {
        let utterances = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Utterance::new(i + 1, t))
            .collect();
        Self {
            id: id.into(),
            utterances,
            gold: None,
        }
    }

    pub fn with_gold(mut self, boundaries: Vec<usize>) -> Result<Self, DialogueError> {
        self.gold = Some(Segmentation::new(self.len(), boundaries)?);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn gap_count(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// Texts the scoring stage should see: rewritten-if-present.
    pub fn resolved_texts(&self) -> Vec<&str> {
        self.utterances.iter().map(Utterance::resolved_text).collect()
    }
}

/// Returns `d` unchanged when every structural invariant holds.
pub fn validate_dialogue(d: Dialogue) -> Result<Dialogue, DialogueError> {
    if d.utterances.is_empty() {
        return Err(DialogueError::EmptyDialogue(d.id));
    }
    for (pos, u) in d.utterances.iter().enumerate() {
        if u.index != pos + 1 {
            return Err(DialogueError::IndexMismatch {
                id: d.id.clone(),
                position: pos + 1,
                found: u.index,
            });
        }
        if u.text.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance {
                id: d.id.clone(),
                index: u.index,
            });
        }
        if matches!(&u.rewritten, Some(r) if r.trim().is_empty()) {
            return Err(DialogueError::EmptyRewrite {
                id: d.id.clone(),
                index: u.index,
            });
        }
    }
    if let Some(gold) = &d.gold {
        if gold.n() != d.len() {
            return Err(DialogueError::LengthMismatch {
                segmentation: gold.n(),
                dialogue: d.len(),
            });
        }
        // re-run range checks: a Segmentation may have been deserialized
        Segmentation::new(gold.n(), gold.boundaries().to_vec())?;
    }
    Ok(d)
}

/// Gap scores `r_1..r_{n-1}`; stored 0-based (`scores[g]` is gap `g + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSeries {
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("relevance score at gap {gap} is not finite ({value})")]
pub struct NonFiniteScore {
    pub gap: usize,
    pub value: f64,
}

impl RelevanceSeries {
    pub fn new(scores: Vec<f64>) -> Result<Self, NonFiniteScore> {
        if let Some((g, &v)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NonFiniteScore { gap: g + 1, value: v });
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Utterance count implied by the series length.
    pub fn utterance_count(&self) -> usize {
        self.scores.len() + 1
    }

    /// Score at 1-based gap `g`.
    pub fn at(&self, g: usize) -> f64 {
        self.scores[g - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.scores
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("embedding dimension must be >= 1")]
    ZeroDimension,
    #[error("expected {expected} values for a {n}x{d} matrix, got {got}")]
    ShapeMismatch {
        n: usize,
        d: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

/// Dense `n x d` per-utterance vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self, MatrixError> {
        if d == 0 {
            return Err(MatrixError::ZeroDimension);
        }
        if values.len() != n * d {
            return Err(MatrixError::ShapeMismatch {
                n,
                d,
                expected: n * d,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite {
                row: pos / d + 1,
                col: pos % d + 1,
            });
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(MatrixError::ShapeMismatch {
                n: rows.len(),
                d,
                expected: rows.len() * d,
                got: rows.len() * d - d + bad.len(),
            });
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Row of 1-based utterance `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = (i - 1) * self.d;
        &self.values[start..start + self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// How the TextTiling cutoff is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// `mean(depths) - stddev(depths) / 2`, population standard deviation.
    MeanMinusHalfSigma,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Neighbor half-window for pair mining.
    pub w: usize,
    pub margin: f64,
    /// Centered moving-average width applied before depth scoring; 1 is off.
    pub smoothing_width: usize,
    pub threshold_policy: ThresholdPolicy,
    /// Weight on the coherence term of each relevance score.
    pub coherence_weight: f64,
    /// Minimum segment length enforced by TextTiling; `None` disables it.
    pub min_seg_len: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_WINDOW,
            margin: 1.0,
            smoothing_width: 1,
            threshold_policy: ThresholdPolicy::MeanMinusHalfSigma,
            coherence_weight: 1.0,
            min_seg_len: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.w == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        if !self.margin.is_finite() {
            return Err(ConfigError::NonFinite("margin"));
        }
        if self.margin <= 0.0 {
            return Err(ConfigError::NonPositiveMargin(self.margin));
        }
        if self.smoothing_width == 0 || self.smoothing_width.is_multiple_of(2) {
            return Err(ConfigError::BadSmoothingWidth(self.smoothing_width));
        }
        if !self.coherence_weight.is_finite() {
            return Err(ConfigError::NonFinite("coherence weight"));
        }
        if let ThresholdPolicy::Fixed(t) = self.threshold_policy {
            if !t.is_finite() {
                return Err(ConfigError::NonFinite("threshold"));
            }
        }
        Ok(())
    }
}
