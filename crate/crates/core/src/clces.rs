//! Cross-layer consistency-enhanced scoring.
//!
//! A token's raw score at one layer is noisy. Its *rank* among the frame's
//! tokens is tracked over a sliding window of the most recent layers; a
//! token whose rank barely moves earns a multiplicative reward
//! `s · (1 + λ · Cons)` with `Cons = max(0, 1 − σ·√12)`, where σ is the
//! sample standard deviation of its normalized ranks and `1/√12` is the
//! standard deviation of a uniform rank.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// `sqrt(12)`, the reciprocal of the standard deviation of `Uniform(0, 1)`.
pub const SQRT_12: f64 = 3.464_101_615_137_754_6;

/// Ascending ranks: the lowest score gets rank 0, ties go to the lower index.
pub fn compute_ranks(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable, so equal scores keep index order
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    Ok(ranks)
}

/// Maps ranks onto `[0, 1]` as `R / (N − 1)`. A single token maps to 0.5.
pub fn normalize_ranks(ranks: &[usize]) -> Vec<f64> {
    match ranks.len() {
        0 => Vec::new(),
        1 => vec![0.5],
        n => {
            let denom = (n - 1) as f64;
            ranks.iter().map(|&r| r as f64 / denom).collect()
        }
    }
}

/// Normalized-rank columns of the most recent `capacity` layers of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RankWindow {
    capacity: usize,
    columns: VecDeque<Vec<f64>>,
}

/// Per-token rank statistics over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub mean_ranks: Vec<f64>,
    pub std_ranks: Vec<f64>,
    pub consistency: Vec<f64>,
}

impl ConsistencyReport {
    pub fn mean_consistency(&self) -> f64 {
        mean(&self.consistency)
    }

    /// Population standard deviation of the consistency values.
    pub fn consistency_dispersion(&self) -> f64 {
        let mu = self.mean_consistency();
        let n = self.consistency.len().max(1) as f64;
        (self
            .consistency
            .iter()
            .map(|c| (c - mu) * (c - mu))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl RankWindow {
    /// Panics if `capacity == 0`.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "rank window capacity must be at least 1");
        Self {
            capacity,
            columns: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.columns.len()
    }

    /// Token count of the stored columns, if any.
    pub fn width(&self) -> Option<usize> {
        self.columns.front().map(Vec::len)
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.iter().map(Vec::as_slice)
    }

    /// Appends one layer's normalized ranks, dropping the oldest column when
    /// the window is full.
    pub fn push_layer(&mut self, normalized_ranks: Vec<f64>) -> Result<()> {
        if let Some(n) = self.width() {
            if n != normalized_ranks.len() {
                return Err(Error::DimensionMismatch {
                    context: "rank window column",
                    expected: n,
                    found: normalized_ranks.len(),
                });
            }
        }
        if self.columns.len() == self.capacity {
            self.columns.pop_front();
        }
        self.columns.push_back(normalized_ranks);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.columns.clear();
    }

    /// Mean, sample standard deviation (divisor `filled − 1`) and consistency
    /// of every token. With fewer than two columns the variance is undefined
    /// and every consistency is 0.
    ///
    /// Moments use Welford's update, so a token with identical ranks in every
    /// column gets a standard deviation of exactly 0 and consistency 1.
    pub fn consistency(&self) -> Result<ConsistencyReport> {
        let n = self.width().ok_or(Error::EmptyWindow)?;
        let k = self.filled();
        let mut mean_ranks = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for (j, col) in self.columns.iter().enumerate() {
            let count = (j + 1) as f64;
            for ((m, q), &r) in mean_ranks.iter_mut().zip(&mut m2).zip(col) {
                let delta = r - *m;
                *m += delta / count;
                *q += delta * (r - *m);
            }
        }
        if k < 2 {
            return Ok(ConsistencyReport {
                mean_ranks,
                std_ranks: vec![0.0; n],
                consistency: vec![0.0; n],
            });
        }
        let std_ranks: Vec<f64> = m2
            .iter()
            .map(|q| (q.max(0.0) / (k - 1) as f64).sqrt())
            .collect();
        let consistency = std_ranks
            .iter()
            .map(|s| (1.0 - s * SQRT_12).clamp(0.0, 1.0))
            .collect();
        Ok(ConsistencyReport {
            mean_ranks,
            std_ranks,
            consistency,
        })
    }
}

/// `raw · (1 + λ · cons)`, elementwise.
pub fn enhance_scores(raw: &[f64], cons: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if raw.len() != cons.len() {
        return Err(Error::DimensionMismatch {
            context: "consistency vector",
            expected: raw.len(),
            found: cons.len(),
        });
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeInput(0));
    }
    if let Some(i) = raw.iter().position(|s| s.is_nan() || *s < 0.0) {
        return Err(Error::NegativeInput(i));
    }
    if let Some(i) = cons.iter().position(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::NegativeInput(i));
    }
    Ok(raw
        .iter()
        .zip(cons)
        .map(|(s, c)| s * (1.0 + lambda * c))
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Rank by counting strictly smaller scores plus equal scores at lower
    /// indices.
    fn counting_ranks(s: &[f64]) -> Vec<usize> {
        (0..s.len())
            .map(|i| {
                (0..s.len())
                    .filter(|&j| s[j] < s[i] || (s[j] == s[i] && j < i))
                    .count()
            })
            .collect()
    }

    fn window_of(cols: &[Vec<f64>]) -> RankWindow {
        let mut w = RankWindow::new(cols.len().max(1));
        for c in cols {
            w.push_layer(c.clone()).unwrap();
        }
        w
    }

    #[test]
    fn ranks_ascending() {
        assert_eq!(compute_ranks(&[0.3, 0.1, 0.2]).unwrap(), vec![2, 0, 1]);
        assert_eq!(compute_ranks(&[5.0, 5.0, 5.0]).unwrap(), vec![0, 1, 2]);
        assert!(matches!(compute_ranks(&[]), Err(Error::EmptyInput)));
        assert!(matches!(
            compute_ranks(&[1.0, f64::NAN]),
            Err(Error::NonFiniteScore(1))
        ));
    }

    #[test]
    fn ranks_match_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        assert_eq!(compute_ranks(&scores).unwrap(), counting_ranks(&scores));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_ranks(&[0, 1, 2]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_ranks(&[0]), vec![0.5]);
        assert_eq!(
            normalize_ranks(&[3, 0, 2, 1]),
            vec![1.0, 0.0, 2.0 / 3.0, 1.0 / 3.0]
        );
    }

    #[test]
    fn window_ring_semantics() {
        let mut w = RankWindow::new(5);
        w.push_layer(vec![0.0, 1.0]).unwrap();
        assert_eq!(w.filled(), 1);
        let mut history = vec![vec![0.0, 1.0]];
        for i in 1..8 {
            let col = vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0];
            w.push_layer(col.clone()).unwrap();
            history.push(col);
            assert_eq!(w.filled(), (i + 1).min(5));
        }
        let expected = &history[history.len() - 5..];
        let got: Vec<Vec<f64>> = w.columns().map(<[f64]>::to_vec).collect();
        assert_eq!(got, expected);
        assert!(matches!(
            w.push_layer(vec![0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn consistency_examples() {
        let still = window_of(&vec![vec![0.5]; 5]);
        let r = still.consistency().unwrap();
        assert_eq!((r.std_ranks[0], r.consistency[0]), (0.0, 1.0));

        let flip = window_of(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0], vec![0.0]]);
        let r = flip.consistency().unwrap();
        assert!((r.mean_ranks[0] - 0.4).abs() < 1e-15);
        assert!((r.std_ranks[0].powi(2) - 0.3).abs() < 1e-15);
        assert!((r.std_ranks[0] * SQRT_12 - 1.897_366_596_101_027_8).abs() < 1e-12);
        assert_eq!(r.consistency[0], 0.0);

        let single = window_of(&[vec![0.1, 0.9]]);
        assert_eq!(single.consistency().unwrap().consistency, vec![0.0, 0.0]);
    }

    #[test]
    fn partial_window_uses_filled_columns() {
        let mut w = RankWindow::new(5);
        w.push_layer(vec![0.2]).unwrap();
        w.push_layer(vec![0.4]).unwrap();
        let r = w.consistency().unwrap();
        let sd = (2.0f64 * 0.1 * 0.1).sqrt();
        assert!((r.std_ranks[0] - sd).abs() < 1e-15);
        assert!((r.consistency[0] - (1.0 - sd * SQRT_12)).abs() < 1e-12);
    }

    #[test]
    fn uniform_null_matches_monte_carlo() {
        // E[max(0, 1 − σ̂√12)] for five i.i.d. Uniform(0,1) draws, estimated
        // independently from 10^7 samples.
        const NULL_MEAN: f64 = 0.128_382_501_010_811_9;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1000;
        let mut w = RankWindow::new(5);
        for _ in 0..5 {
            w.push_layer((0..n).map(|_| rng.random::<f64>()).collect())
                .unwrap();
        }
        let m = w.consistency().unwrap().mean_consistency();
        assert!((m - NULL_MEAN).abs() <= 0.02, "{m}");
    }

    #[test]
    fn reset_semantics() {
        let mut w = window_of(&vec![vec![0.5, 0.5]; 3]);
        w.reset();
        assert_eq!((w.filled(), w.capacity()), (0, 3));
        assert!(matches!(w.consistency(), Err(Error::EmptyWindow)));
        let once = w.clone();
        w.reset();
        assert_eq!(w, once);
    }

    #[test]
    fn enhancement() {
        assert_eq!(enhance_scores(&[2.0], &[1.0], 0.5).unwrap(), vec![3.0]);
        assert_eq!(enhance_scores(&[0.0], &[1.0], 10.0).unwrap(), vec![0.0]);
        let raw = [0.3, 1.7, 4.0];
        assert_eq!(
            enhance_scores(&raw, &[0.2, 0.9, 0.0], 0.0).unwrap(),
            raw.to_vec()
        );
        assert!(matches!(
            enhance_scores(&[-1.0], &[0.5], 1.0),
            Err(Error::NegativeInput(0))
        ));
        assert!(enhance_scores(&[1.0], &[0.5], -1.0).is_err());
    }

    fn exact_ranks(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![-5i32..5, -1000i32..1000], 1..n)
            .prop_map(|v| v.into_iter().map(|x| x as f64 / 8.0).collect())
    }

    proptest! {
        #[test]
        fn ranks_form_a_permutation(scores in exact_ranks(300)) {
            let r = compute_ranks(&scores).unwrap();
            let n = r.len();
            prop_assert_eq!(r.iter().sum::<usize>(), n * (n - 1) / 2);
            let mut sorted = r.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(r, counting_ranks(&scores));
        }

        #[test]
        fn ranks_invariant_under_monotone_maps(scores in exact_ranks(200)) {
            let r = compute_ranks(&scores).unwrap();
            let affine: Vec<f64> = scores.iter().map(|x| 2.0 * x + 1.0).collect();
            let exp: Vec<f64> = scores.iter().map(|x| x.exp()).collect();
            prop_assert_eq!(&compute_ranks(&affine).unwrap(), &r);
            prop_assert_eq!(&compute_ranks(&exp).unwrap(), &r);
        }

        #[test]
        fn consistency_in_unit_interval(
            cols in (1usize..8, 1usize..20).prop_flat_map(|(w, n)| {
                proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, n), w)
            })
        ) {
            let r = window_of(&cols).consistency().unwrap();
            for (c, s) in r.consistency.iter().zip(&r.std_ranks) {
                prop_assert!((0.0..=1.0).contains(c));
                if *s == 0.0 && cols.len() >= 2 {
                    prop_assert_eq!(*c, 1.0);
                }
            }
        }

        #[test]
        fn wider_spread_never_raises_consistency(
            base in proptest::collection::vec(-1.0f64..1.0, 3..6),
            k1 in 0.0f64..0.3, k2 in 0.0f64..0.3,
        ) {
            // Same mean 0.5, spread scaled by k.
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let center = base.iter().sum::<f64>() / base.len() as f64;
            let col = |k: f64| -> Vec<Vec<f64>> {
                base.iter().map(|b| vec![0.5 + k * (b - center)]).collect()
            };
            let c_lo = window_of(&col(lo)).consistency().unwrap().consistency[0];
            let c_hi = window_of(&col(hi)).consistency().unwrap().consistency[0];
            prop_assert!(c_hi <= c_lo + 1e-12);
        }

        #[test]
        fn equal_consistency_preserves_order(
            raw in proptest::collection::vec(0.0f64..10.0, 1..50),
            c in 0.0f64..=1.0, lambda in 0.0f64..4.0,
        ) {
            let cons = vec![c; raw.len()];
            let e = enhance_scores(&raw, &cons, lambda).unwrap();
            for (ei, ri) in e.iter().zip(&raw) {
                prop_assert!(ei >= ri);
            }
            prop_assert_eq!(compute_ranks(&e).unwrap(), compute_ranks(&raw).unwrap());
        }

        #[test]
        fn repeated_column_is_perfectly_consistent(
            col in proptest::collection::vec(0.0f64..=1.0, 1..40), w in 2usize..12,
        ) {
            let mut win = RankWindow::new(w);
            for _ in 0..w {
                win.push_layer(col.clone()).unwrap();
            }
            let r = win.consistency().unwrap();
            prop_assert!(r.consistency.iter().all(|&c| c == 1.0));
            prop_assert!(r.std_ranks.iter().all(|&s| s == 0.0));
        }
    }
}
