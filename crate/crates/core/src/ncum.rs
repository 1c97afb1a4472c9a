//! Neighboring complete-utterance matching (NCUM).
//!
//! For anchor `i` of an `n`-utterance dialogue with neighbor half-window `w`:
//!
//! ```text
//! U_i     = { j : |i - j| <= w, j != i }        neighbors
//! U_bar_i = { j : |i - j| >  w }                non-neighbors
//! W_i     = same pseudo-segment as i, j != i
//! W_bar_i = any other pseudo-segment
//! P+_i    = U_i ∩ W_i        P-_i = U_bar_i ∩ W_bar_i
//! ```
//!
//! Positives and negatives feed a cosine margin-ranking loss that trains a
//! linear projection head over frozen base embeddings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{relevance_series, CoherenceSeries, EmbeddingProvider, ScoringError, ZERO_NORM};
use crate::segmenters::{texttiling, SegmentError};
use crate::types::{ConfigError, Dialogue, EmbeddingMatrix, RunConfig, Segmentation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NcumError {
    #[error("anchor {anchor} out of range [1, {n}]")]
    AnchorOutOfRange { anchor: usize, n: usize },
    #[error("pseudo-segmentation covers {pseudo} utterances, expected {n}")]
    LengthMismatch { pseudo: usize, n: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no (anchor, positive, negative) triple can be formed")]
    NoTrainablePairs,
    #[error("head has dimension {head} but embeddings have {embeddings}")]
    HeadDimension { head: usize, embeddings: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

fn check_anchor(n: usize, i: usize) -> Result<(), NcumError> {
    if i == 0 || i > n {
        return Err(NcumError::AnchorOutOfRange { anchor: i, n });
    }
    Ok(())
}

/// `(U_i, U_bar_i)`, both ascending.
pub fn neighbor_sets(n: usize, w: usize, i: usize) -> Result<(Vec<usize>, Vec<usize>), NcumError> {
    check_anchor(n, i)?;
    let lo = i.saturating_sub(w).max(1);
    let hi = (i + w).min(n);
    let near = (lo..=hi).filter(|&j| j != i).collect();
    let far = (1..lo).chain(hi + 1..=n).collect();
    Ok((near, far))
}

/// `(W_i, W_bar_i)`, both ascending.
pub fn segment_sets(pseudo: &Segmentation, i: usize) -> Result<(Vec<usize>, Vec<usize>), NcumError> {
    let n = pseudo.n();
    check_anchor(n, i)?;
    let (start, end) = segment_span(pseudo, i);
    let same = (start..=end).filter(|&j| j != i).collect();
    let other = (1..start).chain(end + 1..=n).collect();
    Ok((same, other))
}

/// Inclusive utterance range of the segment holding `i`.
fn segment_span(pseudo: &Segmentation, i: usize) -> (usize, usize) {
    let b = pseudo.boundaries();
    let pos = b.partition_point(|&x| x < i);
    let start = if pos == 0 { 1 } else { b[pos - 1] + 1 };
    let end = b.get(pos).copied().unwrap_or(pseudo.n());
    (start, end)
}

/// Mined `(anchor, other)` index pairs, 1-based. Both lists are sorted and
/// hold every ordered pair produced by some anchor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Positives `U_i ∩ W_i` and negatives `U_bar_i ∩ W_bar_i` for every anchor.
pub fn mine_pairs(n: usize, w: usize, pseudo: &Segmentation) -> Result<PairSet, NcumError> {
    if pseudo.n() != n {
        return Err(NcumError::LengthMismatch { pseudo: pseudo.n(), n });
    }
    let mut out = PairSet::default();
    for i in 1..=n {
        let (start, end) = segment_span(pseudo, i);
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(n);
        // neighbors clipped to the anchor's segment
        out.positives
            .extend((lo.max(start)..=hi.min(end)).filter(|&j| j != i).map(|j| (i, j)));
        // non-neighbors outside the segment
        let left = 1..lo.min(start);
        let right = hi.max(end) + 1..=n;
        out.negatives.extend(left.chain(right).map(|j| (i, j)));
    }
    Ok(out)
}

/// Runs TextTiling over pure topic similarity (no coherence term).
pub fn pseudo_segment(e: &EmbeddingMatrix, cfg: &RunConfig) -> Result<Segmentation, NcumError> {
    if e.n() < 2 {
        return Ok(Segmentation::whole(e.n().max(1)));
    }
    let rel = relevance_series(e, &CoherenceSeries::zeros(e.n() - 1), 0.0)?;
    Ok(texttiling(&rel.series, cfg)?)
}

/// Loss value and its (sub)gradients with respect to each input.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// Cosine and its gradients with respect to both arguments.
fn cosine_with_grads(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = dot / (nu * nv);
    let gu = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - cos * b / (nv * nv))
        .collect();
    (cos, gu, gv)
}

/// `max(0, margin - cos(anchor, pos) + cos(anchor, neg))`.
pub fn margin_ranking_loss(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<MarginLoss, NcumError> {
    if anchor.len() != pos.len() {
        return Err(NcumError::DimensionMismatch(anchor.len(), pos.len()));
    }
    if anchor.len() != neg.len() {
        return Err(NcumError::DimensionMismatch(anchor.len(), neg.len()));
    }
    let d = anchor.len();
    let (cp, ga_p, gp) = cosine_with_grads(anchor, pos);
    let (cn, ga_n, gn) = cosine_with_grads(anchor, neg);
    let raw = margin - cp + cn;
    if raw <= 0.0 {
        return Ok(MarginLoss {
            loss: 0.0,
            grad_anchor: vec![0.0; d],
            grad_pos: vec![0.0; d],
            grad_neg: vec![0.0; d],
        });
    }
    Ok(MarginLoss {
        loss: raw,
        grad_anchor: ga_n.iter().zip(&ga_p).map(|(n, p)| n - p).collect(),
        grad_pos: gp.into_iter().map(|g| -g).collect(),
        grad_neg: gn,
    })
}

/// Affine map `x -> W x + b` applied to frozen base embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    d: usize,
    /// Row-major `d x d`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    trained: bool,
}

impl ProjectionHead {
    pub fn identity(d: usize) -> Self {
        let mut weight = vec![0.0; d * d];
        for k in 0..d {
            weight[k * d + k] = 1.0;
        }
        Self {
            d,
            weight,
            bias: vec![0.0; d],
            trained: false,
        }
    }

    pub fn from_parts(d: usize, weight: Vec<f64>, bias: Vec<f64>, trained: bool) -> Option<Self> {
        let ok = weight.len() == d * d && bias.len() == d && weight.iter().chain(&bias).all(|v| v.is_finite());
        ok.then_some(Self {
            d,
            weight,
            bias,
            trained,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.d)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn apply_matrix(&self, e: &EmbeddingMatrix) -> Result<EmbeddingMatrix, NcumError> {
        if e.d() != self.d {
            return Err(NcumError::HeadDimension {
                head: self.d,
                embeddings: e.d(),
            });
        }
        let values = e.rows().flat_map(|r| self.apply(r)).collect();
        Ok(EmbeddingMatrix::new(e.n(), self.d, values).expect("affine map of finite rows"))
    }

    fn step(&mut self, inputs: [&[f64]; 3], grads: [&[f64]; 3], lr: f64) {
        for (x, g) in inputs.iter().zip(grads) {
            for (r, &gr) in g.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let row = &mut self.weight[r * self.d..(r + 1) * self.d];
                for (w, &xc) in row.iter_mut().zip(x.iter()) {
                    *w -= lr * gr * xc;
                }
                self.bias[r] -= lr * gr;
            }
        }
    }
}

/// Wraps a provider so every embedding passes through a projection head.
pub struct ProjectedEmbeddings<'a, P: ?Sized> {
    pub inner: &'a P,
    pub head: &'a ProjectionHead,
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for ProjectedEmbeddings<'_, P> {
    fn embed(&self, dialogue: &Dialogue) -> Result<EmbeddingMatrix, ScoringError> {
        let base = self.inner.embed(dialogue)?;
        self.head
            .apply_matrix(&base)
            .map_err(|_| ScoringError::DimensionMismatch {
                left: self.head.dim(),
                right: base.d(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// Cap on negatives paired with each positive.
    pub max_negatives: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.05,
            max_negatives: 5,
        }
    }
}

/// Base embeddings of one dialogue with the pairs mined from it.
#[derive(Debug, Clone)]
pub struct MinedDialogue {
    pub id: String,
    pub base: EmbeddingMatrix,
    pub pseudo: Segmentation,
    pub pairs: PairSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub dialogue: usize,
    pub anchor: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Pairs each positive with up to `max_negatives` negatives sharing its
/// anchor, sampled uniformly without replacement when there are more.
pub fn form_triples(data: &[MinedDialogue], max_negatives: usize, rng: &mut ChaCha8Rng) -> Vec<Triple> {
    let mut out = Vec::new();
    for (di, m) in data.iter().enumerate() {
        let mut negs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, j) in &m.pairs.negatives {
            negs.entry(a).or_default().push(j);
        }
        for &(a, p) in &m.pairs.positives {
            let Some(pool) = negs.get(&a) else { continue };
            let chosen: Vec<usize> = if pool.len() <= max_negatives {
                pool.clone()
            } else {
                rand::seq::index::sample(rng, pool.len(), max_negatives)
                    .into_iter()
                    .map(|k| pool[k])
                    .collect()
            };
            out.extend(chosen.into_iter().map(|neg| Triple {
                dialogue: di,
                anchor: a,
                pos: p,
                neg,
            }));
        }
    }
    out
}

/// Mean loss of `head` over `triples`.
pub fn mean_triple_loss(
    head: &ProjectionHead,
    data: &[MinedDialogue],
    triples: &[Triple],
    margin: f64,
) -> Result<f64, NcumError> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in triples {
        let e = &data[t.dialogue].base;
        let l = margin_ranking_loss(
            &head.apply(e.row(t.anchor)),
            &head.apply(e.row(t.pos)),
            &head.apply(e.row(t.neg)),
            margin,
        )?;
        total += l.loss;
    }
    Ok(total / triples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub triples: usize,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Plain per-triple SGD on the margin-ranking loss, starting from `init`
/// (identity when `None`). Deterministic given `cfg.seed`.
pub fn train_head(
    init: Option<ProjectionHead>,
    data: &[MinedDialogue],
    cfg: &RunConfig,
    params: &TrainParams,
) -> Result<TrainOutcome, NcumError> {
    cfg.validate()?;
    let d = data.first().map(|m| m.base.d()).ok_or(NcumError::NoTrainablePairs)?;
    if let Some(bad) = data.iter().find(|m| m.base.d() != d) {
        return Err(NcumError::DimensionMismatch(d, bad.base.d()));
    }
    let mut head = init.unwrap_or_else(|| ProjectionHead::identity(d));
    if head.dim() != d {
        return Err(NcumError::HeadDimension {
            head: head.dim(),
            embeddings: d,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut triples = form_triples(data, params.max_negatives, &mut rng);
    if triples.is_empty() {
        return Err(NcumError::NoTrainablePairs);
    }
    let initial_loss = mean_triple_loss(&head, data, &triples, cfg.margin)?;
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        triples.shuffle(&mut rng);
        let mut total = 0.0;
        for t in &triples {
            let e = &data[t.dialogue].base;
            let (xa, xp, xn) = (e.row(t.anchor), e.row(t.pos), e.row(t.neg));
            let l = margin_ranking_loss(&head.apply(xa), &head.apply(xp), &head.apply(xn), cfg.margin)?;
            total += l.loss;
            if l.loss > 0.0 && params.lr != 0.0 {
                head.step([xa, xp, xn], [&l.grad_anchor, &l.grad_pos, &l.grad_neg], params.lr);
            }
        }
        epoch_losses.push(total / triples.len() as f64);
        head.trained = true;
    }
    Ok(TrainOutcome {
        head,
        triples: triples.len(),
        initial_loss,
        epoch_losses,
    })
}

/// Embeds through `head`, pseudo-segments, and mines pairs for each dialogue.
pub fn mine_corpus(
    dialogues: &[Dialogue],
    base: &[EmbeddingMatrix],
    head: &ProjectionHead,
    cfg: &RunConfig,
) -> Result<Vec<MinedDialogue>, NcumError> {
    dialogues
        .par_iter()
        .zip(base.par_iter())
        .map(|(d, e)| {
            let projected = head.apply_matrix(e)?;
            let pseudo = pseudo_segment(&projected, cfg)?;
            let pairs = mine_pairs(e.n(), cfg.w, &pseudo)?;
            Ok(MinedDialogue {
                id: d.id.clone(),
                base: e.clone(),
                pseudo,
                pairs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub positives: usize,
    pub negatives: usize,
    /// `None` when the round had no usable triples and was skipped.
    pub training: Option<TrainRound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRound {
    pub triples: usize,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub head: ProjectionHead,
    pub rounds: Vec<RoundReport>,
}

/// Alternates pseudo-segmentation, pair mining and head training.
///
/// Base embeddings are computed once; every round re-segments them through
/// the current head. Rounds without triples are skipped. Fails with
/// [`NcumError::NoTrainablePairs`] if no round could train.
pub fn refine_loop<P: EmbeddingProvider + ?Sized>(
    dialogues: &[Dialogue],
    provider: &P,
    cfg: &RunConfig,
    params: &TrainParams,
    rounds: usize,
) -> Result<RefineOutcome, NcumError> {
    cfg.validate()?;
    let base: Vec<EmbeddingMatrix> = dialogues
        .par_iter()
        .map(|d| provider.embed(d))
        .collect::<Result<_, _>>()?;
    let d = base
        .first()
        .map(EmbeddingMatrix::d)
        .ok_or(NcumError::NoTrainablePairs)?;
    let mut head = ProjectionHead::identity(d);
    let mut reports = Vec::with_capacity(rounds);
    for round in 1..=rounds.max(1) {
        let mined = mine_corpus(dialogues, &base, &head, cfg)?;
        let positives = mined.iter().map(|m| m.pairs.positives.len()).sum();
        let negatives = mined.iter().map(|m| m.pairs.negatives.len()).sum();
        let round_cfg = RunConfig {
            seed: cfg.seed.wrapping_add(round as u64 - 1),
            ..cfg.clone()
        };
        let training = match train_head(Some(head.clone()), &mined, &round_cfg, params) {
            Ok(out) => {
                head = out.head;
                Some(TrainRound {
                    triples: out.triples,
                    initial_loss: out.initial_loss,
                    epoch_losses: out.epoch_losses,
                })
            }
            Err(NcumError::NoTrainablePairs) => {
                log::info!("round {round}: no trainable triples, skipping");
                None
            }
            Err(e) => return Err(e),
        };
        reports.push(RoundReport {
            round,
            positives,
            negatives,
            training,
        });
    }
    if reports.iter().all(|r| r.training.is_none()) {
        return Err(NcumError::NoTrainablePairs);
    }
    Ok(RefineOutcome { head, rounds: reports })
}
