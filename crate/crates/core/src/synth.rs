//! Seeded synthetic corpora with known topic structure.
//!
//! Each dialogue draws two orthogonal unit topic directions inside the first
//! `topic_dims` coordinates and alternates between them segment by segment.
//! Every utterance row is `topic_scale * topic + noise`, where the remaining
//! `d - topic_dims` "nuisance" coordinates carry larger, topic-independent
//! noise. Raw cosine is therefore a weak topic signal that a learned
//! projection can sharpen.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::{Dialogue, EmbeddingMatrix, Segmentation};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dialogues: usize,
    pub dim: usize,
    pub topic_dims: usize,
    /// Inclusive range of segments per dialogue.
    pub segments: (usize, usize),
    /// Inclusive range of utterances per segment.
    pub segment_len: (usize, usize),
    pub topic_scale: f64,
    pub topic_noise: f64,
    pub nuisance_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dialogues: 50,
            dim: 16,
            topic_dims: 8,
            segments: (2, 4),
            segment_len: (3, 7),
            topic_scale: 1.0,
            topic_noise: 0.35,
            nuisance_noise: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dialogues: Vec<Dialogue>,
    pub embeddings: BTreeMap<String, EmbeddingMatrix>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two orthonormal directions in the first `k` coordinates.
fn topic_pair(rng: &mut ChaCha8Rng, k: usize) -> (Vec<f64>, Vec<f64>) {
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut a: Vec<f64> = (0..k).map(|_| gaussian(rng)).collect();
    normalize(&mut a);
    let mut b: Vec<f64> = (0..k).map(|_| gaussian(rng)).collect();
    let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
    normalize(&mut b);
    (a, b)
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(cfg.dialogues);
    let mut embeddings = BTreeMap::new();
    for k in 0..cfg.dialogues {
        let id = format!("synth-{seed}-{k:04}");
        let (ta, tb) = topic_pair(&mut rng, cfg.topic_dims);
        let segs = rng.random_range(cfg.segments.0..=cfg.segments.1);
        let lens: Vec<usize> = (0..segs)
            .map(|_| rng.random_range(cfg.segment_len.0..=cfg.segment_len.1))
            .collect();
        let mut texts = Vec::new();
        let mut values = Vec::new();
        let mut boundaries = Vec::new();
        for (s, &len) in lens.iter().enumerate() {
            let topic = if s % 2 == 0 { &ta } else { &tb };
            for _ in 0..len {
                texts.push(format!("topic {} turn {}", s % 2, texts.len() + 1));
                for &t in topic {
                    values.push(cfg.topic_scale * t + cfg.topic_noise * gaussian(&mut rng));
                }
                for _ in cfg.topic_dims..cfg.dim {
                    values.push(cfg.nuisance_noise * gaussian(&mut rng));
                }
            }
            if s + 1 < lens.len() {
                boundaries.push(texts.len());
            }
        }
        let n = texts.len();
        let d = Dialogue::from_texts(id.clone(), texts)
            .with_gold(boundaries)
            .expect("generated boundaries are interior gaps");
        embeddings.insert(id, EmbeddingMatrix::new(n, cfg.dim, values).expect("finite"));
        dialogues.push(d);
    }
    SynthCorpus { dialogues, embeddings }
}

/// Dialogues of exactly `n` utterances with `segments` near-equal gold
/// segments and placeholder text; no embeddings.
pub fn fixed_length_corpus(count: usize, n: usize, segments: usize) -> Vec<Dialogue> {
    let segments = segments.clamp(1, n);
    let boundaries: Vec<usize> = (1..segments).map(|s| s * n / segments).collect();
    (0..count)
        .map(|k| {
            let d = Dialogue::from_texts(format!("fixed-{k:04}"), (1..=n).map(|i| format!("turn {i}")));
            Dialogue {
                gold: Some(Segmentation::new(n, boundaries.clone()).expect("interior gaps")),
                ..d
            }
        })
        .collect()
}

/// Dialogues of exactly `n` utterances whose gold segment lengths are drawn
/// uniformly from `segment_len` (the final segment takes the remainder);
/// placeholder text, no embeddings.
pub fn random_gold_corpus(count: usize, n: usize, segment_len: (usize, usize), seed: u64) -> Vec<Dialogue> {
    let (lo, hi) = (segment_len.0.max(1), segment_len.1.max(segment_len.0.max(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let mut boundaries = Vec::new();
            let mut at = 0;
            while n - at > hi {
                let top = hi.min(n - at - lo).max(lo);
                at += rng.random_range(lo..=top);
                boundaries.push(at);
            }
            let d = Dialogue::from_texts(format!("gold-{seed}-{k:04}"), (1..=n).map(|i| format!("turn {i}")));
            Dialogue {
                gold: Some(Segmentation::new(n, boundaries).expect("interior gaps")),
                ..d
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_dialogue;

    #[test]
    fn generated_corpus_is_valid_and_seeded() {
        let cfg = SynthConfig {
            dialogues: 5,
            ..SynthConfig::default()
        };
        let a = generate(&cfg, 3);
        let b = generate(&cfg, 3);
        assert_eq!(a.dialogues, b.dialogues);
        assert_eq!(a.embeddings, b.embeddings);
        for d in &a.dialogues {
            let d = validate_dialogue(d.clone()).unwrap();
            let gold = d.gold.as_ref().unwrap();
            assert!((2..=4).contains(&gold.segment_count()));
            assert_eq!(a.embeddings[&d.id].n(), d.len());
        }
    }

    #[test]
    fn topics_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = topic_pair(&mut rng, 8);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn fixed_length() {
        let c = fixed_length_corpus(2, 20, 4);
        assert_eq!(c[0].gold.as_ref().unwrap().boundaries(), &[5, 10, 15]);
    }

    #[test]
    fn random_gold_segment_lengths_in_range() {
        for d in random_gold_corpus(200, 20, (3, 7), 9) {
            let gold = d.gold.unwrap();
            for (a, b) in gold.segments() {
                let len = b - a + 1;
                assert!((3..=7).contains(&len), "{len}");
            }
        }
    }
}
