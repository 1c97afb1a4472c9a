//! Windowed segmentation error metrics: Pk and WindowDiff.
//!
//! Windows start at utterance positions `i in [1, n-k]`. A window pairs
//! utterance `i` with utterance `i + k`; the gaps strictly inside it are
//! `i..i+k-1`. When `n <= k` a single window spans the whole dialogue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Segmentation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference has n = {reference} but hypothesis has n = {hypothesis}")]
    LengthMismatch { reference: usize, hypothesis: usize },
    #[error("window size must be >= 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Pk,
    WindowDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    /// Fraction of windows in error, in `[0, 1]`.
    pub value: f64,
    pub window_k: usize,
    pub comparisons: usize,
    pub disagreements: usize,
}

impl MetricResult {
    fn from_counts(disagreements: usize, comparisons: usize, window_k: usize) -> Self {
        Self {
            value: disagreements as f64 / comparisons as f64,
            window_k,
            comparisons,
            disagreements,
        }
    }

    pub fn percent(&self) -> f64 {
        self.value * 100.0
    }
}

/// Half the mean reference segment length, rounded half away from zero and
/// clamped to `[1, n-1]`.
pub fn default_window(reference: &Segmentation) -> usize {
    let n = reference.n();
    let raw = (n as f64 / (2 * reference.segment_count()) as f64).round() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

fn check(reference: &Segmentation, hypothesis: &Segmentation, k: Option<usize>) -> Result<usize, MetricError> {
    if reference.n() != hypothesis.n() {
        return Err(MetricError::LengthMismatch {
            reference: reference.n(),
            hypothesis: hypothesis.n(),
        });
    }
    match k {
        Some(0) => Err(MetricError::ZeroWindow),
        Some(k) => Ok(k),
        None => Ok(default_window(reference)),
    }
}

/// Window start positions and the effective span; `(starts, span)`.
fn windows(n: usize, k: usize) -> (std::ops::RangeInclusive<usize>, usize) {
    if n > k {
        (1..=n - k, k)
    } else {
        // one window covering the whole dialogue
        (1..=1, n.saturating_sub(1))
    }
}

pub fn pk(reference: &Segmentation, hypothesis: &Segmentation, k: Option<usize>) -> Result<MetricResult, MetricError> {
    let k = check(reference, hypothesis, k)?;
    let (starts, span) = windows(reference.n(), k);
    let mut comparisons = 0;
    let mut disagreements = 0;
    for i in starts {
        let j = i + span;
        let same_ref = reference.segment_of(i) == reference.segment_of(j);
        let same_hyp = hypothesis.segment_of(i) == hypothesis.segment_of(j);
        comparisons += 1;
        disagreements += usize::from(same_ref != same_hyp);
    }
    Ok(MetricResult::from_counts(disagreements, comparisons, k))
}

/// Number of boundaries `b` with `lo <= b < hi`.
fn boundaries_in(s: &Segmentation, lo: usize, hi: usize) -> usize {
    let b = s.boundaries();
    b.partition_point(|&x| x < hi) - b.partition_point(|&x| x < lo)
}

pub fn window_diff(
    reference: &Segmentation,
    hypothesis: &Segmentation,
    k: Option<usize>,
) -> Result<MetricResult, MetricError> {
    let k = check(reference, hypothesis, k)?;
    let (starts, span) = windows(reference.n(), k);
    let mut comparisons = 0;
    let mut disagreements = 0;
    for i in starts {
        let r = boundaries_in(reference, i, i + span);
        let h = boundaries_in(hypothesis, i, i + span);
        comparisons += 1;
        disagreements += usize::from(r != h);
    }
    Ok(MetricResult::from_counts(disagreements, comparisons, k))
}

pub fn evaluate(
    kind: MetricKind,
    reference: &Segmentation,
    hypothesis: &Segmentation,
    k: Option<usize>,
) -> Result<MetricResult, MetricError> {
    match kind {
        MetricKind::Pk => pk(reference, hypothesis, k),
        MetricKind::WindowDiff => window_diff(reference, hypothesis, k),
    }
}

/// Macro-averaged corpus scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub pk: f64,
    pub wd: f64,
    pub dialogues: usize,
}

/// Mean of per-dialogue Pk and WD over `(reference, hypothesis)` pairs. Each
/// dialogue uses `k` if given, else its own reference-derived window.
pub fn macro_average<'a, I>(pairs: I, k: Option<usize>) -> Result<CorpusScores, MetricError>
where
    I: IntoIterator<Item = (&'a Segmentation, &'a Segmentation)>,
{
    let mut pk_sum = 0.0;
    let mut wd_sum = 0.0;
    let mut count = 0;
    for (r, h) in pairs {
        pk_sum += pk(r, h, k)?.value;
        wd_sum += window_diff(r, h, k)?.value;
        count += 1;
    }
    let denom = count.max(1) as f64;
    Ok(CorpusScores {
        pk: pk_sum / denom,
        wd: wd_sum / denom,
        dialogues: count,
    })
}

/// Naive reference implementation used to cross-check [`pk`] and
/// [`window_diff`]. Shares nothing with them beyond the input type.
pub mod oracle {
    use super::{MetricError, MetricKind};
    use crate::types::Segmentation;

    /// Segment label of every utterance, built by walking the boundary list.
    fn labels(s: &Segmentation) -> Vec<u32> {
        let mut out = vec![0u32; s.n()];
        let mut label = 0u32;
        let mut next = s.boundaries().iter().peekable();
        for (pos, slot) in out.iter_mut().enumerate() {
            *slot = label;
            // utterance pos+1 is the last one before gap pos+1
            if next.peek() == Some(&&(pos + 1)) {
                next.next();
                label += 1;
            }
        }
        out
    }

    /// Returns the error rate as the exact ratio `(errors, windows)` plus its
    /// float value.
    pub fn brute_force_oracle(
        reference: &Segmentation,
        hypothesis: &Segmentation,
        k: usize,
        kind: MetricKind,
    ) -> Result<(usize, usize, f64), MetricError> {
        if reference.n() != hypothesis.n() {
            return Err(MetricError::LengthMismatch {
                reference: reference.n(),
                hypothesis: hypothesis.n(),
            });
        }
        if k == 0 {
            return Err(MetricError::ZeroWindow);
        }
        let n = reference.n();
        let full_ref = labels(reference);
        let full_hyp = labels(hypothesis);
        let spans: Vec<(usize, usize)> = if n > k {
            (0..n - k).map(|s| (s, s + k)).collect()
        } else {
            vec![(0, n.saturating_sub(1))]
        };
        let mut errors = 0;
        for &(a, b) in &spans {
            let ref_win: Vec<u32> = full_ref[a..=b].to_vec();
            let hyp_win: Vec<u32> = full_hyp[a..=b].to_vec();
            let wrong = match kind {
                MetricKind::Pk => {
                    let r = ref_win.first() == ref_win.last();
                    let h = hyp_win.first() == hyp_win.last();
                    r != h
                }
                MetricKind::WindowDiff => {
                    let changes = |w: &[u32]| w.windows(2).filter(|p| p[0] != p[1]).count();
                    changes(&ref_win) != changes(&hyp_win)
                }
            };
            if wrong {
                errors += 1;
            }
        }
        Ok((errors, spans.len(), errors as f64 / spans.len() as f64))
    }
}
