//! Per-frame compression pipeline.
//!
//! For every layer of a new frame: append the frame's keys and values to the
//! cache, rank the raw scores and fold them into the frame's rank window,
//! enhance the scores by cross-layer consistency, smooth them over the patch
//! grid, mix them with key diversity, then triage, merge and evict the
//! unprotected tokens down to the layer budget. Anchor protection is
//! refreshed once all layers are done.
//!
//! Frames are transactional: the state is only replaced when every layer
//! succeeded.

pub mod dap;
pub mod hybrid;
pub mod smoothing;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clces::{compute_ranks, enhance_scores, normalize_ranks, ConsistencyReport, RankWindow};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::hcc::compress_layer;
use crate::scoresrc::FrameActivations;
use crate::types::{LayerCache, TokenId, TokenLayout, TokenRecord};

pub use dap::{AnchorPolicy, SimplifiedDap};
pub use hybrid::{diversity, hybrid_score, min_max_normalize};
pub use smoothing::{gaussian_kernel, gaussian_smooth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// Cache size after compression.
    pub cache_size: usize,
    pub n_retain: usize,
    pub n_merge: usize,
    pub n_evict: usize,
    /// Protected tokens present in the cache during triage.
    pub n_protected: usize,
    pub mean_consistency: f64,
    /// Population standard deviation of the frame's consistency values.
    pub cons_dispersion: f64,
    /// Merge candidates evicted for lack of a target.
    pub merge_demotions: usize,
    /// Merge candidates dropped because both weights were zero.
    pub zero_score_skips: usize,
    /// Merge candidates actually folded into a target.
    pub merged: usize,
}

impl LayerDiagnostics {
    pub fn n_evictable(&self) -> usize {
        self.n_retain + self.n_merge + self.n_evict
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub layers: Vec<LayerDiagnostics>,
    pub protected_total: usize,
    pub historical_anchors: usize,
}

impl FrameDiagnostics {
    pub fn cached_tokens(&self) -> usize {
        self.layers.iter().map(|l| l.cache_size).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub caches: Vec<LayerCache>,
    /// Ranks of the current frame's most recent layers; reset every frame.
    pub rank_window: RankWindow,
    /// Initial anchors plus the current historical anchors.
    pub protected_ids: BTreeSet<TokenId>,
    /// Tokens of frame 0.
    pub initial_ids: BTreeSet<TokenId>,
    pub frame_counter: usize,
    pub next_token_id: TokenId,
    pub diagnostics: Vec<FrameDiagnostics>,
}

impl StreamState {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            caches: (0..cfg.num_layers)
                .map(|l| LayerCache::new(l, cfg.layer_budget(l)))
                .collect(),
            rank_window: RankWindow::new(cfg.window_size.max(1)),
            protected_ids: BTreeSet::new(),
            initial_ids: BTreeSet::new(),
            frame_counter: 0,
            next_token_id: 0,
            diagnostics: Vec::new(),
        }
    }

    pub fn cached_tokens(&self) -> usize {
        self.caches.iter().map(LayerCache::len).sum()
    }
}

/// Scores of one layer of the current frame.
#[derive(Debug, Clone)]
struct LayerScores {
    enhanced: Vec<f64>,
    smoothed: Vec<f64>,
    report: ConsistencyReport,
}

#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    layout: TokenLayout,
    policy: Box<dyn AnchorPolicy>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        Self::with_policy(cfg, Box::new(SimplifiedDap))
    }

    pub fn with_policy(cfg: PipelineConfig, policy: Box<dyn AnchorPolicy>) -> Result<Self> {
        cfg.validate()?;
        let layout = TokenLayout::for_tokens(cfg.tokens_per_frame);
        Ok(Self {
            cfg,
            layout,
            policy,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn initial_state(&self) -> StreamState {
        StreamState::new(&self.cfg)
    }

    fn check_frame(&self, state: &StreamState, frame: &[FrameActivations]) -> Result<()> {
        let t = state.frame_counter;
        if frame.len() != self.cfg.num_layers {
            return Err(Error::DimensionMismatch {
                context: "layers in frame",
                expected: self.cfg.num_layers,
                found: frame.len(),
            });
        }
        for (l, a) in frame.iter().enumerate() {
            let check = || -> Result<()> {
                if a.layer_index != l {
                    return Err(Error::DimensionMismatch {
                        context: "layer index",
                        expected: l,
                        found: a.layer_index,
                    });
                }
                if a.frame_index != t {
                    return Err(Error::DimensionMismatch {
                        context: "frame index",
                        expected: t,
                        found: a.frame_index,
                    });
                }
                if a.tokens() != self.cfg.tokens_per_frame {
                    return Err(Error::DimensionMismatch {
                        context: "tokens per frame",
                        expected: self.cfg.tokens_per_frame,
                        found: a.tokens(),
                    });
                }
                a.validate()?;
                if let Some(d) = state.caches[l].key_dim() {
                    if d != a.key_dim() {
                        return Err(Error::DimensionMismatch {
                            context: "key width",
                            expected: d,
                            found: a.key_dim(),
                        });
                    }
                }
                Ok(())
            };
            check().map_err(|e| e.at_layer(t, l))?;
        }
        Ok(())
    }

    fn layer_scores(&self, window: &mut RankWindow, a: &FrameActivations) -> Result<LayerScores> {
        let ranks = compute_ranks(&a.raw_scores)?;
        window.push_layer(normalize_ranks(&ranks))?;
        let report = window.consistency()?;
        let enhanced = enhance_scores(
            &a.raw_scores,
            &report.consistency,
            self.cfg.consistency_weight,
        )?;
        let smoothed = gaussian_smooth(&enhanced, &self.layout, self.cfg.smoothing_alpha)?;
        Ok(LayerScores {
            enhanced,
            smoothed,
            report,
        })
    }

    fn compress(
        &self,
        state: &StreamState,
        a: &FrameActivations,
        scores: &LayerScores,
    ) -> Result<(LayerCache, LayerDiagnostics)> {
        let l = a.layer_index;
        let t = state.frame_counter;
        let mut cache = state.caches[l].clone();
        let first_new = cache.len();
        for i in 0..a.tokens() {
            let token = TokenRecord::new(
                state.next_token_id + i as TokenId,
                t,
                self.layout.kind(i),
                self.layout.grid_pos(i),
                a.keys.row(i).to_vec(),
                a.values.row(i).to_vec(),
                a.raw_scores[i],
                scores.enhanced[i],
            )?;
            cache.push(token)?;
        }

        let protected = |id: TokenId| state.protected_ids.contains(&id);
        let mut activation = Vec::new();
        let mut keys = Vec::new();
        let mut reference = Vec::new();
        for (pos, tok) in cache.entries.iter().enumerate() {
            if protected(tok.token_id) {
                reference.push(tok.key.as_slice());
                continue;
            }
            activation.push(if pos >= first_new {
                scores.smoothed[pos - first_new]
            } else {
                tok.enhanced_score
            });
            keys.push(tok.key.as_slice());
        }
        let triage_scores = hybrid_score(&activation, &keys, &reference, self.cfg.hybrid_beta);

        let out = compress_layer(&mut cache, protected, &triage_scores, self.cfg.merge_ratio)?;
        debug_assert!(
            cache.check_invariants().is_ok(),
            "{:?}",
            cache.check_invariants()
        );

        let diag = LayerDiagnostics {
            layer: l,
            cache_size: cache.len(),
            n_retain: out.triage.retain.len(),
            n_merge: out.triage.merge.len(),
            n_evict: out.triage.evict.len(),
            n_protected: out.protected_count,
            mean_consistency: scores.report.mean_consistency(),
            cons_dispersion: scores.report.consistency_dispersion(),
            merge_demotions: out.demotions,
            zero_score_skips: out.stats.zero_score_skips,
            merged: out.stats.merged,
        };
        Ok((cache, diag))
    }

    /// Processes one frame of per-layer activations. On error `state` is left
    /// untouched.
    pub fn process_frame<'s>(
        &self,
        state: &'s mut StreamState,
        frame: &[FrameActivations],
    ) -> Result<&'s FrameDiagnostics> {
        self.check_frame(state, frame)?;
        let t = state.frame_counter;

        let mut window = state.rank_window.clone();
        window.reset();
        let mut scores = Vec::with_capacity(frame.len());
        for a in frame {
            scores.push(
                self.layer_scores(&mut window, a)
                    .map_err(|e| e.at_layer(t, a.layer_index))?,
            );
        }

        let compressed: Vec<(LayerCache, LayerDiagnostics)> = frame
            .par_iter()
            .zip(&scores)
            .map(|(a, s)| {
                self.compress(state, a, s)
                    .map_err(|e| e.at_layer(t, a.layer_index))
            })
            .collect::<Result<_>>()?;

        let (mut caches, layers): (Vec<_>, Vec<_>) = compressed.into_iter().unzip();
        let mut initial = state.initial_ids.clone();
        if t == 0 {
            initial
                .extend((0..self.cfg.tokens_per_frame as TokenId).map(|i| state.next_token_id + i));
        }
        let historical = self.policy.historical_anchors(&caches, &initial, &self.cfg);
        let protected: BTreeSet<TokenId> = initial.union(&historical).copied().collect();
        for cache in &mut caches {
            for tok in &mut cache.entries {
                tok.protected_flag = protected.contains(&tok.token_id);
            }
        }

        state.caches = caches;
        state.rank_window = window;
        state.initial_ids = initial;
        state.protected_ids = protected;
        state.frame_counter += 1;
        state.next_token_id += self.cfg.tokens_per_frame as TokenId;
        state.diagnostics.push(FrameDiagnostics {
            frame: t,
            layers,
            protected_total: state.protected_ids.len(),
            historical_anchors: historical.len(),
        });
        Ok(state.diagnostics.last().expect("just pushed"))
    }

    /// Recomputes the protected set of `state`: every frame-0 token plus the
    /// policy's historical anchors.
    pub fn dap_protect(&self, state: &StreamState) -> BTreeSet<TokenId> {
        let hist = self
            .policy
            .historical_anchors(&state.caches, &state.initial_ids, &self.cfg);
        state.initial_ids.union(&hist).copied().collect()
    }
}
