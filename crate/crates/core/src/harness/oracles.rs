//! Deliberately naive reference implementations.
//!
//! Each oracle recomputes a quantity by the most direct method available,
//! without sharing code with the production path, so the two can be
//! compared in tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::types::TokenId;

/// Rank by counting: strictly smaller scores, plus equal scores at a lower index.
pub fn oracle_rank(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| {
            (0..scores.len())
                .filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect()
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa.sqrt() < 1e-12 || bb.sqrt() < 1e-12 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Nearest target token id per merge key by exhaustive search: all
/// similarities are computed, the maximum taken, and the lowest id among
/// the maximisers returned.
pub fn oracle_nn(merge_keys: &[Vec<f64>], targets: &[(TokenId, Vec<f64>)]) -> Vec<TokenId> {
    merge_keys
        .iter()
        .map(|k| {
            let sims: Vec<f64> = targets.iter().map(|(_, t)| naive_cosine(k, t)).collect();
            let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            targets
                .iter()
                .zip(&sims)
                .filter(|(_, &s)| s == best)
                .map(|((id, _), _)| *id)
                .min()
                .expect("at least one target")
        })
        .collect()
}

/// A (key, value, score) triple.
pub type WeightedToken = (Vec<f64>, Vec<f64>, f64);

/// Score-weighted mean of a target and everything merged into it, in one
/// batch. Returns the fused key, value and total score.
pub fn oracle_batch_merge(target: &WeightedToken, merged: &[WeightedToken]) -> WeightedToken {
    let all: Vec<&WeightedToken> = std::iter::once(target).chain(merged).collect();
    let total: f64 = all.iter().map(|t| t.2).sum();
    let mix = |pick: fn(&WeightedToken) -> &Vec<f64>| {
        let d = pick(target).len();
        (0..d)
            .map(|i| all.iter().map(|t| t.2 * pick(t)[i]).sum::<f64>() / total)
            .collect::<Vec<f64>>()
    };
    (mix(|t| &t.0), mix(|t| &t.1), total)
}

/// Softmax of `q·kᵀ/√d` row by row, with no max subtraction.
pub fn oracle_dense_attention(queries: &Matrix, keys: &Matrix) -> Matrix {
    let d = queries.cols() as f64;
    let mut out = Matrix::zeros(queries.rows(), keys.rows());
    for i in 0..queries.rows() {
        let mut row = vec![0.0; keys.rows()];
        for (j, r) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..queries.cols() {
                s += queries.get(i, c) * keys.get(j, c);
            }
            *r = (s / d.sqrt()).exp();
        }
        let z: f64 = row.iter().sum();
        for (j, r) in row.iter().enumerate() {
            out.set(i, j, r / z);
        }
    }
    out
}

/// Monte Carlo mean of the consistency of a token whose `window` normalized
/// ranks are independent `Uniform(0, 1)`, with its standard error.
pub fn oracle_uniform_null(window: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut xs = vec![0.0; window];
    for _ in 0..samples {
        for x in xs.iter_mut() {
            *x = rng.random::<f64>();
        }
        let m = xs.iter().sum::<f64>() / window as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (window as f64 - 1.0);
        let c = (1.0 - var.sqrt() * 12f64.sqrt()).max(0.0);
        sum += c;
        sum_sq += c * c;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
