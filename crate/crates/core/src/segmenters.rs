//! Boundary selection over gap scores.
//!
//! [`texttiling`] is the main segmenter. [`greedy_segment`] and
//! [`random_segment`] are the comparison baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scoring::{cosine, fnv1a};
use crate::types::{EmbeddingMatrix, RelevanceSeries, RunConfig, Segmentation, ThresholdPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("smoothing width must be odd and >= 1, got {0}")]
    EvenWidth(usize),
}

/// Non-negative depth per gap, 0-based storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSeries {
    depths: Vec<f64>,
}

impl DepthSeries {
    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Population mean and standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        if self.depths.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.depths.len() as f64;
        let mean = self.depths.iter().sum::<f64>() / n;
        let var = self.depths.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// Centered moving average; the window is truncated at both ends.
pub fn smooth(r: &RelevanceSeries, width: usize) -> Result<RelevanceSeries, SegmentError> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(SegmentError::EvenWidth(width));
    }
    if width == 1 {
        return Ok(r.clone());
    }
    let s = r.scores();
    let half = width / 2;
    let out = (0..s.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(s.len() - 1);
            s[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    Ok(RelevanceSeries::new(out).expect("mean of finite values is finite"))
}

/// TextTiling depth: rise to the nearest left peak plus rise to the nearest
/// right peak, each found by climbing while scores do not decrease.
pub fn depth_scores(r: &RelevanceSeries) -> DepthSeries {
    let s = r.scores();
    let depths = (0..s.len())
        .map(|i| {
            let mut l = i;
            while l > 0 && s[l - 1] >= s[l] {
                l -= 1;
            }
            let mut h = i;
            while h + 1 < s.len() && s[h + 1] >= s[h] {
                h += 1;
            }
            (s[l] - s[i]) + (s[h] - s[i])
        })
        .collect();
    DepthSeries { depths }
}

/// Gaps (0-based) no higher than either neighbor and strictly below at least
/// one of them. Points inside a flat run are not valleys; a lone gap is.
fn valleys(s: &[f64]) -> Vec<bool> {
    (0..s.len())
        .map(|i| {
            let left = (i > 0).then(|| s[i - 1]);
            let right = s.get(i + 1).copied();
            let no_higher = left.is_none_or(|l| l >= s[i]) && right.is_none_or(|r| r >= s[i]);
            let dips = left.is_some_and(|l| l > s[i]) || right.is_some_and(|r| r > s[i]);
            no_higher && (dips || s.len() == 1)
        })
        .collect()
}

pub fn depth_threshold(depths: &DepthSeries, policy: ThresholdPolicy) -> f64 {
    match policy {
        ThresholdPolicy::MeanMinusHalfSigma => {
            let (mean, std) = depths.mean_std();
            mean - std / 2.0
        }
        ThresholdPolicy::Fixed(t) => t,
    }
}

/// Smooths `r`, scores depths, and cuts at every valley whose depth strictly
/// exceeds the configured threshold.
pub fn texttiling(r: &RelevanceSeries, cfg: &RunConfig) -> Result<Segmentation, SegmentError> {
    let n = r.utterance_count();
    if r.is_empty() {
        return Ok(Segmentation::whole(n));
    }
    let smoothed = smooth(r, cfg.smoothing_width)?;
    let depths = depth_scores(&smoothed);
    let cutoff = depth_threshold(&depths, cfg.threshold_policy);
    let valley = valleys(smoothed.scores());

    let mut candidates: Vec<usize> = (0..depths.len())
        .filter(|&g| valley[g] && depths.depths[g] > cutoff)
        .collect();

    if let Some(min_len) = cfg.min_seg_len.filter(|&m| m > 1) {
        // deepest first; a cut survives if every segment it creates is long enough
        candidates.sort_by(|&a, &b| depths.depths[b].total_cmp(&depths.depths[a]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = Vec::new();
        for g in candidates {
            let b = g + 1;
            let fits_edges = b >= min_len && n - b >= min_len;
            let fits_kept = kept.iter().all(|&k| k.abs_diff(b) >= min_len);
            if fits_edges && fits_kept {
                kept.push(b);
            }
        }
        return Ok(Segmentation::new(n, kept).expect("gaps are distinct and in range"));
    }

    let mask: Vec<bool> = (0..depths.len())
        .map(|g| candidates.binary_search(&g).is_ok())
        .collect();
    Ok(Segmentation::from_gap_mask(&mask))
}

/// Mean cosine between consecutive rows; the default greedy threshold.
pub fn mean_adjacent_cosine(e: &EmbeddingMatrix) -> f64 {
    if e.n() < 2 {
        return 0.0;
    }
    let total: f64 = (1..e.n())
        .map(|i| cosine(e.row(i), e.row(i + 1)).expect("rows share a dimension"))
        .sum();
    total / (e.n() - 1) as f64
}

/// Cuts gap `i` whenever `cos(row_i, row_{i+1}) < tau`.
pub fn greedy_segment(e: &EmbeddingMatrix, tau: f64) -> Segmentation {
    let mask: Vec<bool> = (1..e.n())
        .map(|i| cosine(e.row(i), e.row(i + 1)).expect("rows share a dimension") < tau)
        .collect();
    if mask.is_empty() {
        return Segmentation::whole(e.n());
    }
    Segmentation::from_gap_mask(&mask)
}

/// Draws `b` uniformly from `{0, .., n-1}`, then cuts each gap independently
/// with probability `b / n`.
pub fn random_segment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Segmentation {
    if n <= 1 {
        return Segmentation::whole(n.max(1));
    }
    let b = rng.random_range(0..n);
    let p = b as f64 / n as f64;
    let mask: Vec<bool> = (1..n).map(|_| rng.random_bool(p)).collect();
    Segmentation::from_gap_mask(&mask)
}

/// Per-dialogue generator derived from the run seed and the dialogue id, so
/// results do not depend on processing order.
pub fn dialogue_rng(seed: u64, dialogue_id: &str) -> ChaCha8Rng {
    let mixed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(dialogue_id.as_bytes());
    ChaCha8Rng::seed_from_u64(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> RelevanceSeries {
        RelevanceSeries::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn smooth_examples() {
        let r = series(&[0.3, 0.1, 0.7]);
        assert_eq!(smooth(&r, 1).unwrap(), r);
        let s = smooth(&series(&[0.0, 1.0, 0.0]), 3).unwrap();
        assert!(close(s.scores(), &[0.5, 1.0 / 3.0, 0.5]));
        let c = smooth(&series(&[0.4; 6]), 5).unwrap();
        assert!(close(c.scores(), &[0.4; 6]));
        assert_eq!(smooth(&r, 2), Err(SegmentError::EvenWidth(2)));
    }

    #[test]
    fn depth_examples() {
        let d = depth_scores(&series(&[0.1, 0.2, 0.3]));
        assert!(close(d.depths(), &[0.2, 0.1, 0.0]));

        let d = depth_scores(&series(&[0.9, 0.8, 0.2, 0.85, 0.9]));
        assert!((d.depths()[2] - 1.4).abs() < 1e-12);
        assert_eq!(d.depths()[0], 0.0);
        assert_eq!(d.depths()[4], 0.0);

        let d = depth_scores(&series(&[0.5; 4]));
        assert!(d.depths().iter().all(|&x| x == 0.0));
        assert_eq!(depth_scores(&series(&[0.7])).depths(), &[0.0]);
    }

    #[test]
    fn texttiling_examples() {
        let cfg = RunConfig::default();
        let s = texttiling(&series(&[0.9, 0.8, 0.2, 0.85, 0.9]), &cfg).unwrap();
        assert_eq!(s.boundaries(), &[3]);
        assert_eq!(s.n(), 6);

        let s = texttiling(&series(&[0.6; 7]), &cfg).unwrap();
        assert!(s.boundaries().is_empty());

        // one gap: depth 0, so only a negative fixed threshold can fire
        let one = series(&[0.4]);
        assert!(texttiling(&one, &cfg).unwrap().boundaries().is_empty());
        let fixed = RunConfig {
            threshold_policy: ThresholdPolicy::Fixed(-0.1),
            ..cfg.clone()
        };
        assert_eq!(texttiling(&one, &fixed).unwrap().boundaries(), &[1]);
    }

    #[test]
    fn plateaus_are_not_cut() {
        // deep valleys push the mean-minus-half-sigma cutoff below zero
        let r = series(&[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let s = texttiling(&r, &RunConfig::default()).unwrap();
        assert_eq!(s.boundaries(), &[4, 9]);
        let fixed = RunConfig {
            threshold_policy: ThresholdPolicy::Fixed(-1.0),
            ..RunConfig::default()
        };
        assert!(texttiling(&series(&[0.3; 5]), &fixed).unwrap().boundaries().is_empty());
    }

    #[test]
    fn min_segment_length() {
        let r = series(&[0.9, 0.1, 0.9, 0.2, 0.9, 0.9, 0.9]);
        let plain = texttiling(&r, &RunConfig::default()).unwrap();
        assert_eq!(plain.boundaries(), &[2, 4]);
        let cfg = RunConfig {
            min_seg_len: Some(3),
            ..RunConfig::default()
        };
        // gap 2 is the deeper cut and creates a 2-utterance first segment
        assert_eq!(texttiling(&r, &cfg).unwrap().boundaries(), &[4]);
    }

    #[test]
    fn greedy_examples() {
        let same = EmbeddingMatrix::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!(greedy_segment(&same, 0.5).boundaries().is_empty());
        let split =
            EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(greedy_segment(&split, 0.5).boundaries(), &[2]);
        assert!(greedy_segment(&split, -2.0).boundaries().is_empty());
        assert!((mean_adjacent_cosine(&split) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_examples() {
        let mut rng = dialogue_rng(1, "x");
        assert!(random_segment(1, &mut rng).boundaries().is_empty());
        let a = random_segment(30, &mut dialogue_rng(7, "d1"));
        let b = random_segment(30, &mut dialogue_rng(7, "d1"));
        assert_eq!(a, b);
    }

    #[test]
    fn random_mean_boundary_count() {
        // E[count] = E[b]/n * (n-1) = ((n-1)/2)/n * (n-1) = 9.025 at n = 20
        let n = 20;
        let expected = ((n - 1) as f64 / 2.0) / n as f64 * (n - 1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| random_segment(n, &mut rng).boundaries().len())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - expected).abs() < 0.3, "mean {mean} vs {expected}");
    }

    proptest! {
        #[test]
        fn texttiling_valid_and_shift_invariant(
            v in proptest::collection::vec(-1.0f64..2.0, 1..60),
            c in -3.0f64..3.0,
        ) {
            let cfg = RunConfig::default();
            let r = series(&v);
            let s = texttiling(&r, &cfg).unwrap();
            prop_assert_eq!(s.n(), v.len() + 1);
            prop_assert!(Segmentation::new(s.n(), s.boundaries().to_vec()).is_ok());
            let shifted = series(&v.iter().map(|x| x + c).collect::<Vec<_>>());
            let t = texttiling(&shifted, &cfg).unwrap();
            prop_assert_eq!(s, t);
        }

        #[test]
        fn depths_non_negative(v in proptest::collection::vec(-1.0f64..1.0, 1..40)) {
            let r = series(&v);
            let d = depth_scores(&r);
            prop_assert!(d.depths().iter().all(|&x| x >= 0.0));
            prop_assert_eq!(depth_scores(&smooth(&r, 1).unwrap()), d);
        }

        #[test]
        fn greedy_monotone_in_tau(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..20),
            t1 in -1.0f64..1.0,
            t2 in -1.0f64..1.0,
        ) {
            let e = EmbeddingMatrix::from_rows(&rows).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = greedy_segment(&e, lo);
            let b = greedy_segment(&e, hi);
            prop_assert!(a.boundaries().iter().all(|g| b.is_boundary(*g)));
        }
    }
}
