//! Shared fixtures for the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use streamkv::pipeline::{AnchorPolicy, Pipeline, SimplifiedDap};
use streamkv::scoresrc::FrameActivations;
use streamkv::{LayerCache, PipelineConfig, TokenId, TokenLayout};

/// Small but non-trivial configuration: 4 layers of 16 tokens (a 3×4 patch grid).
pub fn small_cfg(seed: u64, per_layer_budget: usize) -> PipelineConfig {
    PipelineConfig {
        num_layers: 4,
        tokens_per_frame: 16,
        model_dim: 16,
        key_dim: 8,
        ffn_dim: 32,
        rng_seed: seed,
        ..PipelineConfig::default()
    }
    .with_uniform_layer_budget(per_layer_budget)
}

/// Cached token in the eviction-only reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RefToken {
    pub id: TokenId,
    pub frame: usize,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub raw: f64,
}

fn ref_cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().zip(a).map(|(x, y)| x * y).sum::<f64>().sqrt();
    let nb = b.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        d / (na * nb)
    }
}

fn ref_minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; v.len()]
    }
}

fn ref_smooth(raw: &[f64], rows: usize, cols: usize, first: usize, alpha: f64) -> Vec<f64> {
    if alpha == 0.0 {
        return raw.to_vec();
    }
    let mut w = [[0.0; 3]; 3];
    let mut z = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = (i as f64 - 1.0, j as f64 - 1.0);
            w[i][j] = (-(a * a + b * b) / 2.0).exp();
            z += w[i][j];
        }
    }
    let mut out = raw.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let rr = (r as isize + i as isize - 1).clamp(0, rows as isize - 1) as usize;
                    let cc = (c as isize + j as isize - 1).clamp(0, cols as isize - 1) as usize;
                    acc += w[i][j] / z * raw[first + rr * cols + cc];
                }
            }
            let k = first + r * cols + c;
            out[k] = (1.0 - alpha) * raw[k] + alpha * acc;
        }
    }
    out
}

/// Eviction-only cache manager written without the production triage or
/// scoring code. Per layer it keeps every protected token plus the best
/// `budget − |protected|` of the rest, ranked by the blend of min-max
/// normalized (smoothed) raw score and key diversity; ties go to the lower id.
pub struct EvictionReference {
    cfg: PipelineConfig,
    pub caches: Vec<Vec<RefToken>>,
    protected: BTreeSet<TokenId>,
    initial: BTreeSet<TokenId>,
    frame: usize,
}

impl EvictionReference {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            caches: vec![Vec::new(); cfg.num_layers],
            protected: BTreeSet::new(),
            initial: BTreeSet::new(),
            frame: 0,
        }
    }

    pub fn step(&mut self, frame: &[FrameActivations]) {
        let m = self.cfg.tokens_per_frame;
        let base = (self.frame * m) as TokenId;
        let layout = TokenLayout::for_tokens(m);
        for (l, a) in frame.iter().enumerate() {
            let budget = self.cfg.layer_budget(l);
            let smoothed = ref_smooth(
                &a.raw_scores,
                layout.grid_rows,
                layout.grid_cols,
                layout.specials(),
                self.cfg.smoothing_alpha,
            );
            let mut cache = std::mem::take(&mut self.caches[l]);
            let mut activation: Vec<(usize, f64)> = Vec::new();
            for (pos, t) in cache.iter().enumerate() {
                if !self.protected.contains(&t.id) {
                    activation.push((pos, t.raw));
                }
            }
            for i in 0..m {
                cache.push(RefToken {
                    id: base + i as TokenId,
                    frame: self.frame,
                    key: a.keys.row(i).to_vec(),
                    value: a.values.row(i).to_vec(),
                    raw: a.raw_scores[i],
                });
                activation.push((cache.len() - 1, smoothed[i]));
            }
            let anchors: Vec<&RefToken> = cache
                .iter()
                .filter(|t| self.protected.contains(&t.id))
                .collect();
            let div: Vec<f64> = activation
                .iter()
                .map(|&(pos, _)| {
                    if anchors.is_empty() {
                        1.0
                    } else {
                        1.0 - anchors
                            .iter()
                            .map(|p| ref_cos(&cache[pos].key, &p.key))
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                })
                .collect();
            let act = ref_minmax(&activation.iter().map(|a| a.1).collect::<Vec<_>>());
            let div = ref_minmax(&div);
            let beta = self.cfg.hybrid_beta;
            let mut scored: Vec<(f64, TokenId, usize)> = activation
                .iter()
                .enumerate()
                .map(|(k, &(pos, _))| (beta * act[k] + (1.0 - beta) * div[k], cache[pos].id, pos))
                .collect();
            scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let room = budget - anchors.len();
            let keep: BTreeSet<usize> = scored.iter().take(room).map(|s| s.2).collect();
            let protected = &self.protected;
            self.caches[l] = cache
                .into_iter()
                .enumerate()
                .filter(|(pos, t)| protected.contains(&t.id) || keep.contains(pos))
                .map(|(_, t)| t)
                .collect();
        }
        if self.frame == 0 {
            self.initial = (0..m as TokenId).collect();
        }
        // The anchor policy is a pluggable component shared with production.
        let as_caches = self.as_layer_caches();
        let hist = SimplifiedDap.historical_anchors(&as_caches, &self.initial, &self.cfg);
        self.protected = self.initial.union(&hist).copied().collect();
        self.frame += 1;
    }

    fn as_layer_caches(&self) -> Vec<LayerCache> {
        let layout = TokenLayout::for_tokens(self.cfg.tokens_per_frame);
        let m = self.cfg.tokens_per_frame as TokenId;
        self.caches
            .iter()
            .enumerate()
            .map(|(l, ts)| {
                let mut c = LayerCache::new(l, self.cfg.layer_budget(l));
                for t in ts {
                    let i = (t.id % m) as usize;
                    c.push(
                        streamkv::TokenRecord::new(
                            t.id,
                            t.frame,
                            layout.kind(i),
                            layout.grid_pos(i),
                            t.key.clone(),
                            t.value.clone(),
                            t.raw,
                            t.raw,
                        )
                        .unwrap(),
                    )
                    .unwrap();
                }
                c
            })
            .collect()
    }
}

/// Layer-by-layer differences between production caches and the reference:
/// token-set mismatches plus tokens whose key or value bits differ.
pub fn cache_differences(caches: &[LayerCache], reference: &[Vec<RefToken>]) -> usize {
    let mut diffs = 0;
    for (c, r) in caches.iter().zip(reference) {
        let a: Vec<TokenId> = c.ids().collect();
        let b: Vec<TokenId> = r.iter().map(|t| t.id).collect();
        if a != b {
            diffs += a.iter().filter(|id| !b.contains(id)).count()
                + b.iter().filter(|id| !a.contains(id)).count();
            continue;
        }
        for (t, u) in c.entries.iter().zip(r) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            if bits(&t.key) != bits(&u.key) || bits(&t.value) != bits(&u.value) {
                diffs += 1;
            }
        }
    }
    diffs
}

/// Runs the pipeline and the reference side by side on a toy stream and
/// returns the total number of differences over all frames.
pub fn baseline_differences(cfg: &PipelineConfig, frames: usize) -> usize {
    let stream =
        streamkv::harness::generate_stream(cfg.rng_seed, frames, cfg, Default::default()).unwrap();
    let pipeline = Pipeline::new(cfg.clone()).unwrap();
    let mut state = pipeline.initial_state();
    let mut reference = EvictionReference::new(cfg);
    let mut diffs = 0;
    for frame in &stream {
        pipeline.process_frame(&mut state, frame).unwrap();
        reference.step(frame);
        diffs += cache_differences(&state.caches, &reference.caches);
    }
    diffs
}

/// Camera-kind record with the given key, value and enhanced score.
pub fn token(id: TokenId, key: Vec<f64>, value: Vec<f64>, score: f64) -> streamkv::TokenRecord {
    streamkv::TokenRecord::new(
        id,
        0,
        streamkv::TokenKind::Camera,
        None,
        key,
        value,
        score,
        score,
    )
    .unwrap()
}

/// Folds `order` (indices into `group`) one at a time into `target` with the
/// production fusion routine and returns the final target record.
pub fn fuse_in_order(
    target: &streamkv::TokenRecord,
    group: &[streamkv::TokenRecord],
    order: &[usize],
) -> streamkv::TokenRecord {
    use std::collections::BTreeMap;
    use streamkv::hcc::{fuse, TriageResult};
    let mut cache = LayerCache::new(0, group.len() + 1);
    cache.push(target.clone()).unwrap();
    for t in group {
        cache.push(t.clone()).unwrap();
    }
    for &i in order {
        let cand = group[i].token_id;
        let triage = TriageResult {
            retain: vec![0],
            merge: vec![1],
            evict: vec![],
            tau_merge: 0.0,
            tau_evict: 0.0,
            assignment: BTreeMap::from([(1, target.token_id)]),
        };
        let stats = fuse(&mut cache, &[target.token_id, cand], &triage).unwrap();
        assert_eq!(stats.merged, 1);
    }
    cache.get(target.token_id).unwrap().clone()
}

/// Heap's algorithm over `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
