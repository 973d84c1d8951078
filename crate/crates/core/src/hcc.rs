//! Hybrid cache compression: retain / merge / evict triage under a budget.
//!
//! The evictable tokens of a layer are sorted by score. The best
//! `budget − |protected|` are retained, a fraction `r_m` of the remainder is
//! merged into its nearest retained or protected neighbour (cosine similarity
//! of keys) and everything else is evicted. A merge folds the candidate into
//! its target as a score-weighted mean of keys and values, and the target's
//! score absorbs the candidate's, so repeated merges into one target add up
//! to the batch weighted mean regardless of order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::types::{LayerCache, TokenId};

/// Partition of the evictable set. Indices refer to the score vector handed
/// to [`triage`]; each set is sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TriageResult {
    pub retain: Vec<usize>,
    pub merge: Vec<usize>,
    pub evict: Vec<usize>,
    /// Lowest merged score (equals `tau_evict` when nothing is merged).
    pub tau_merge: f64,
    /// Lowest retained score (`+∞` when nothing is retained).
    pub tau_evict: f64,
    /// Merge index → target token.
    pub assignment: BTreeMap<usize, TokenId>,
}

impl TriageResult {
    pub fn len(&self) -> usize {
        self.retain.len() + self.merge.len() + self.evict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of merge candidates among `n_rest` non-retained tokens:
/// `ceil(r_m · n_rest)`, with products within 1e-9 of an integer rounded to
/// it so that decimal ratios like 0.07 × 100 give 7 rather than 8.
pub fn merge_count(merge_ratio: f64, n_rest: usize) -> usize {
    let x = merge_ratio * n_rest as f64;
    let nearest = x.round();
    let c = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (c.max(0.0) as usize).min(n_rest)
}

/// Descending by score, ties to the lower index.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Splits the evictable tokens into retain / merge / evict by count.
pub fn triage(
    scores: &[f64],
    protected_count: usize,
    budget: usize,
    merge_ratio: f64,
) -> Result<TriageResult> {
    if budget < protected_count {
        return Err(Error::BudgetTooSmall {
            budget,
            protected: protected_count,
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    if let Some(i) = scores.iter().position(|s| *s < 0.0) {
        return Err(Error::NegativeInput(i));
    }

    let order = descending(scores);
    let n_retain = scores.len().min(budget - protected_count);
    let n_merge = merge_count(merge_ratio, scores.len() - n_retain);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let retain = sorted(&order[..n_retain]);
    let merge = sorted(&order[n_retain..n_retain + n_merge]);
    let evict = sorted(&order[n_retain + n_merge..]);

    let min_of = |set: &[usize]| set.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let tau_evict = min_of(&retain);
    let tau_merge = if merge.is_empty() {
        tau_evict
    } else {
        min_of(&merge)
    };
    Ok(TriageResult {
        retain,
        merge,
        evict,
        tau_merge,
        tau_evict,
        assignment: BTreeMap::new(),
    })
}

/// For each merge key, the index of the target with the highest cosine
/// similarity; ties go to the lower token id.
pub fn nn_assign(merge_keys: &[&[f64]], targets: &[(TokenId, &[f64])]) -> Result<Vec<usize>> {
    if targets.is_empty() {
        return Err(Error::NoMergeTargets);
    }
    let d = targets[0].1.len();
    for k in merge_keys
        .iter()
        .copied()
        .chain(targets.iter().map(|t| t.1))
    {
        if k.len() != d {
            return Err(Error::DimensionMismatch {
                context: "merge key",
                expected: d,
                found: k.len(),
            });
        }
    }
    Ok(merge_keys
        .iter()
        .map(|k| {
            let mut best = 0;
            let mut best_sim = cosine(k, targets[0].1);
            for (j, (id, t)) in targets.iter().enumerate().skip(1) {
                let sim = cosine(k, t);
                if sim > best_sim || (sim == best_sim && *id < targets[best].0) {
                    best = j;
                    best_sim = sim;
                }
            }
            best
        })
        .collect())
}

/// Outcome counters of [`fuse`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    /// Candidates folded into a target.
    pub merged: usize,
    /// Candidates dropped because candidate and target both scored zero.
    pub zero_score_skips: usize,
}

/// Applies a triage to `cache`. `candidates[i]` is the token behind index `i`
/// of the triage; fusion weights are the records' enhanced scores. Merge
/// candidates are folded in descending score order, evicted and merged tokens
/// are removed, and the remaining tokens keep their order.
pub fn fuse(
    cache: &mut LayerCache,
    candidates: &[TokenId],
    triage: &TriageResult,
) -> Result<FuseStats> {
    if triage.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            context: "triage candidates",
            expected: triage.len(),
            found: candidates.len(),
        });
    }
    let pos: HashMap<TokenId, usize> = cache
        .entries
        .iter()
        .enumerate()
        .map(|(i, t)| (t.token_id, i))
        .collect();
    let lookup = |id: TokenId| pos.get(&id).copied().ok_or(Error::MissingToken(id));
    for &id in candidates {
        lookup(id)?;
    }

    let removed: HashSet<TokenId> = triage
        .merge
        .iter()
        .chain(&triage.evict)
        .map(|&i| candidates[i])
        .collect();

    let mut merges = Vec::with_capacity(triage.merge.len());
    for &i in &triage.merge {
        let target = *triage.assignment.get(&i).ok_or(Error::NoMergeTargets)?;
        if removed.contains(&target) {
            return Err(Error::MissingToken(target));
        }
        merges.push((lookup(candidates[i])?, lookup(target)?));
    }
    merges.sort_by(|a, b| {
        let (ea, eb) = (&cache.entries[a.0], &cache.entries[b.0]);
        eb.enhanced_score
            .partial_cmp(&ea.enhanced_score)
            .unwrap_or(Ordering::Equal)
            .then(ea.token_id.cmp(&eb.token_id))
    });

    let mut stats = FuseStats::default();
    for (src, dst) in merges {
        let s_i = cache.entries[src].enhanced_score;
        let s_j = cache.entries[dst].enhanced_score;
        let total = s_i + s_j;
        if total == 0.0 {
            stats.zero_score_skips += 1;
            continue;
        }
        let (wi, wj) = (s_i / total, s_j / total);
        let (key_i, value_i, absorbed_i) = {
            let t = &cache.entries[src];
            (t.key.clone(), t.value.clone(), t.absorbed_count)
        };
        let target = &mut cache.entries[dst];
        for (k, ki) in target.key.iter_mut().zip(&key_i) {
            *k = wj * *k + wi * ki;
        }
        for (v, vi) in target.value.iter_mut().zip(&value_i) {
            *v = wj * *v + wi * vi;
        }
        target.enhanced_score = total;
        target.absorbed_count += 1 + absorbed_i;
        stats.merged += 1;
    }

    cache.entries.retain(|t| !removed.contains(&t.token_id));
    Ok(stats)
}

/// Result of compressing one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCompression {
    pub triage: TriageResult,
    pub evictable: Vec<TokenId>,
    pub protected_count: usize,
    /// Merge candidates evicted because no retained or protected target existed.
    pub demotions: usize,
    pub stats: FuseStats,
}

/// Triage, nearest-neighbour assignment and fusion of one layer.
/// `scores[i]` ranks the i-th unprotected entry of `cache` in cache order.
pub fn compress_layer(
    cache: &mut LayerCache,
    is_protected: impl Fn(TokenId) -> bool,
    scores: &[f64],
    merge_ratio: f64,
) -> Result<LayerCompression> {
    let evictable: Vec<TokenId> = cache.ids().filter(|&id| !is_protected(id)).collect();
    if evictable.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            context: "triage scores",
            expected: evictable.len(),
            found: scores.len(),
        });
    }
    let protected_count = cache.len() - evictable.len();
    let mut result = triage(scores, protected_count, cache.budget, merge_ratio)?;

    let mut applied = result.clone();
    let mut demotions = 0;
    if !result.merge.is_empty() {
        let retained: HashSet<TokenId> = result.retain.iter().map(|&i| evictable[i]).collect();
        let targets: Vec<(TokenId, &[f64])> = cache
            .entries
            .iter()
            .filter(|t| is_protected(t.token_id) || retained.contains(&t.token_id))
            .map(|t| (t.token_id, t.key.as_slice()))
            .collect();
        if targets.is_empty() {
            demotions = applied.merge.len();
            applied.evict.append(&mut applied.merge);
            applied.evict.sort_unstable();
        } else {
            let pos: HashMap<TokenId, usize> =
                cache.ids().enumerate().map(|(i, id)| (id, i)).collect();
            let merge_keys: Vec<&[f64]> = result
                .merge
                .iter()
                .map(|&i| cache.entries[pos[&evictable[i]]].key.as_slice())
                .collect();
            let nearest = nn_assign(&merge_keys, &targets)?;
            let assignment: BTreeMap<usize, TokenId> = result
                .merge
                .iter()
                .zip(nearest)
                .map(|(&i, j)| (i, targets[j].0))
                .collect();
            result.assignment = assignment.clone();
            applied.assignment = assignment;
        }
    }

    let stats = fuse(cache, &evictable, &applied)?;
    Ok(LayerCompression {
        triage: result,
        evictable,
        protected_count,
        demotions,
        stats,
    })
}
