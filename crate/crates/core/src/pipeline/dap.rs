//! Anchor protection.
//!
//! Every frame-0 token is a permanent anchor. On top of that a pluggable
//! [`AnchorPolicy`] may protect historical tokens. The default
//! [`SimplifiedDap`] protects the `η` fraction of non-initial cached tokens
//! whose keys are least similar to the initial anchors, skipping tokens with
//! diversity below `τ` and drawing from at most `K_max` distinct frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use super::hybrid::diversity;
use crate::config::PipelineConfig;
use crate::types::{LayerCache, TokenId};

pub trait AnchorPolicy: Debug + Send + Sync {
    /// Historical anchors, recomputed after every frame. Must not return
    /// initial anchors and must leave every layer able to hold its protected
    /// tokens within budget.
    fn historical_anchors(
        &self,
        caches: &[LayerCache],
        initial: &BTreeSet<TokenId>,
        cfg: &PipelineConfig,
    ) -> BTreeSet<TokenId>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimplifiedDap;

/// Cached non-initial token with its mean diversity against the initial
/// anchors over the layers that hold it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorCandidate {
    pub token_id: TokenId,
    pub frame_index: usize,
    pub diversity: f64,
}

/// Candidates in ascending token-id order.
pub fn anchor_candidates(
    caches: &[LayerCache],
    initial: &BTreeSet<TokenId>,
) -> Vec<AnchorCandidate> {
    let mut acc: BTreeMap<TokenId, (usize, f64, usize)> = BTreeMap::new();
    for cache in caches {
        let anchors: Vec<&[f64]> = cache
            .entries
            .iter()
            .filter(|t| initial.contains(&t.token_id))
            .map(|t| t.key.as_slice())
            .collect();
        for t in cache
            .entries
            .iter()
            .filter(|t| !initial.contains(&t.token_id))
        {
            let e = acc.entry(t.token_id).or_insert((t.frame_index, 0.0, 0));
            e.1 += diversity(&t.key, &anchors);
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(token_id, (frame_index, sum, n))| AnchorCandidate {
            token_id,
            frame_index,
            diversity: sum / n as f64,
        })
        .collect()
}

/// Largest historical anchor count every layer can hold next to the
/// initial anchors.
pub fn anchor_capacity(caches: &[LayerCache], initial: &BTreeSet<TokenId>) -> usize {
    caches
        .iter()
        .map(|c| {
            let init = c.ids().filter(|id| initial.contains(id)).count();
            c.budget.saturating_sub(init)
        })
        .min()
        .unwrap_or(0)
}

impl AnchorPolicy for SimplifiedDap {
    fn historical_anchors(
        &self,
        caches: &[LayerCache],
        initial: &BTreeSet<TokenId>,
        cfg: &PipelineConfig,
    ) -> BTreeSet<TokenId> {
        let mut cands = anchor_candidates(caches, initial);
        let quota = ((cfg.dap_eta * cands.len() as f64).floor() as usize)
            .min(anchor_capacity(caches, initial));
        cands.retain(|c| c.diversity >= cfg.dap_tau);
        cands.sort_by(|a, b| {
            b.diversity
                .partial_cmp(&a.diversity)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.token_id.cmp(&b.token_id))
        });

        let mut frames = BTreeSet::new();
        let mut chosen = BTreeSet::new();
        for c in cands {
            if chosen.len() == quota {
                break;
            }
            if frames.contains(&c.frame_index) || frames.len() < cfg.dap_kmax {
                frames.insert(c.frame_index);
                chosen.insert(c.token_id);
            }
        }
        chosen
    }
}
