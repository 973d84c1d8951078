//! Mixes activation scores with key diversity relative to a reference set.

use crate::linalg::cosine;

/// Min-max normalization onto `[0, 1]`; a constant vector maps to 0.5.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![0.5; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// `1 − max cosine` of `key` against the reference keys; 1 when there are none.
pub fn diversity(key: &[f64], reference: &[&[f64]]) -> f64 {
    reference
        .iter()
        .map(|r| cosine(key, r))
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))))
        .map_or(1.0, |m| 1.0 - m)
}

/// `β · norm(activation) + (1 − β) · norm(diversity)`, both min-max
/// normalized over the evictable set.
pub fn hybrid_score(
    activation: &[f64],
    keys: &[&[f64]],
    reference: &[&[f64]],
    beta: f64,
) -> Vec<f64> {
    assert_eq!(activation.len(), keys.len(), "one key per activation");
    let act = min_max_normalize(activation);
    let div: Vec<f64> = keys.iter().map(|k| diversity(k, reference)).collect();
    let div = min_max_normalize(&div);
    act.iter()
        .zip(&div)
        .map(|(a, d)| beta * a + (1.0 - beta) * d)
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn beta_one_is_normalized_activation() {
        let keys: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]];
        let reference: Vec<&[f64]> = vec![&[1.0, 0.0]];
        let out = hybrid_score(&[2.0, 4.0, 3.0], &keys, &reference, 1.0);
        assert_eq!(out, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn duplicate_key_has_zero_diversity() {
        let reference: Vec<&[f64]> = vec![&[0.2, -0.4, 1.0], &[1.0, 0.0, 0.0]];
        assert!(diversity(&[0.2, -0.4, 1.0], &reference).abs() < 1e-15);
        assert_eq!(diversity(&[0.2, -0.4, 1.0], &[]), 1.0);
    }

    #[test]
    fn constant_vectors_normalize_to_half() {
        assert_eq!(min_max_normalize(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert_eq!(min_max_normalize(&[]), Vec::<f64>::new());
    }

    #[test]
    fn matches_brute_force_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let keys: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let act: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let key_refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let ref_refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let got = hybrid_score(&act, &key_refs, &ref_refs, 0.5);

        let mut div = vec![0.0; n];
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for r in &refs {
                let mut d = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for t in 0..6 {
                    d += keys[i][t] * r[t];
                    na += keys[i][t] * keys[i][t];
                    nb += r[t] * r[t];
                }
                best = best.max(d / (na.sqrt() * nb.sqrt()));
            }
            div[i] = 1.0 - best;
        }
        let norm = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
        };
        let (a, d) = (norm(&act), norm(&div));
        for i in 0..n {
            let want = 0.5 * a[i] + 0.5 * d[i];
            assert!((got[i] - want).abs() < 1e-12, "{i}: {} vs {want}", got[i]);
        }
    }
}
