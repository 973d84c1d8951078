mod common;

use common::{baseline_differences, small_cfg};
use streamkv::harness::generate_stream;
use streamkv::hcc::merge_count;
use streamkv::pipeline::Pipeline;
use streamkv::scoresrc::Regime;
use streamkv::{Error, PipelineConfig};

fn toy_cfg(per_layer: usize) -> PipelineConfig {
    PipelineConfig {
        num_layers: 4,
        tokens_per_frame: 64,
        ..PipelineConfig::default()
    }
    .with_uniform_layer_budget(per_layer)
}

#[test]
fn occupancy_fills_to_budget_and_stays_there() {
    let cfg = toy_cfg(256);
    let stream = generate_stream(11, 20, &cfg, Regime::Structured).unwrap();
    let pipeline = Pipeline::new(cfg.clone()).unwrap();
    let mut state = pipeline.initial_state();
    for (t, frame) in stream.iter().enumerate() {
        pipeline.process_frame(&mut state, frame).unwrap();
        for cache in &state.caches {
            assert_eq!(cache.len(), (64 * (t + 1)).min(256), "frame {t}");
            cache.check_invariants().unwrap();
        }
    }
}

#[test]
fn initial_tokens_are_never_evicted() {
    let cfg = small_cfg(2, 40);
    let stream = generate_stream(2, 25, &cfg, Regime::Structured).unwrap();
    let pipeline = Pipeline::new(cfg).unwrap();
    let mut state = pipeline.initial_state();
    for frame in &stream {
        pipeline.process_frame(&mut state, frame).unwrap();
        for cache in &state.caches {
            for id in 0..16 {
                assert!(cache.get(id).is_some(), "initial token {id} lost");
            }
        }
    }
}

#[test]
fn triage_counts_cover_the_evictable_set() {
    let cfg = PipelineConfig {
        merge_ratio: 0.15,
        ..small_cfg(5, 48)
    };
    let stream = generate_stream(5, 30, &cfg, Regime::Structured).unwrap();
    let pipeline = Pipeline::new(cfg.clone()).unwrap();
    let mut state = pipeline.initial_state();
    let mut prev = vec![0usize; cfg.num_layers];
    for frame in &stream {
        let diag = pipeline.process_frame(&mut state, frame).unwrap().clone();
        for (l, d) in diag.layers.iter().enumerate() {
            assert_eq!(d.n_evictable(), prev[l] + 16 - d.n_protected);
            assert_eq!(d.cache_size, d.n_protected + d.n_retain);
            let n_rest = d.n_merge + d.n_evict;
            assert_eq!(d.n_merge, merge_count(0.15, n_rest));
            assert_eq!(
                d.n_merge,
                (0.15 * n_rest as f64 - 1e-9).ceil().max(0.0) as usize
            );
            assert_eq!(d.merged + d.merge_demotions + d.zero_score_skips, d.n_merge);
            prev[l] = d.cache_size;
        }
    }
}

#[test]
fn failed_frame_leaves_state_untouched() {
    let cfg = small_cfg(9, 40);
    let stream = generate_stream(9, 6, &cfg, Regime::Structured).unwrap();
    let pipeline = Pipeline::new(cfg).unwrap();
    let mut state = pipeline.initial_state();
    for frame in &stream[..5] {
        pipeline.process_frame(&mut state, frame).unwrap();
    }
    let snapshot = state.clone();
    let mut bad = stream[5].clone();
    bad[2].raw_scores[7] = f64::INFINITY;
    let err = pipeline.process_frame(&mut state, &bad).unwrap_err();
    assert!(
        matches!(
            err,
            Error::AtLayer {
                frame: 5,
                layer: 2,
                ..
            }
        ),
        "{err:?}"
    );
    assert_eq!(state, snapshot);
    pipeline.process_frame(&mut state, &stream[5]).unwrap();
    assert_eq!(state.frame_counter, 6);
}

#[test]
fn eviction_only_configuration_matches_reference() {
    for seed in 0..4 {
        let cfg = PipelineConfig {
            consistency_weight: 0.0,
            merge_ratio: 0.0,
            ..small_cfg(seed, 40)
        };
        assert_eq!(baseline_differences(&cfg, 15), 0, "seed {seed}");
    }
}

#[test]
fn components_produce_distinct_diagnostics() {
    let base = small_cfg(4, 40);
    let reports: Vec<_> = [(0.0, 0.0), (0.0, 0.15), (0.5, 0.0), (0.5, 0.15)]
        .iter()
        .map(|&(l, r)| {
            let cfg = PipelineConfig {
                consistency_weight: l,
                merge_ratio: r,
                ..base.clone()
            };
            streamkv::harness::run(&cfg, &Default::default(), &Default::default())
                .unwrap()
                .per_frame
        })
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(reports[i], reports[j], "cells {i} and {j}");
        }
    }
}
