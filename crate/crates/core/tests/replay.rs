mod common;

use common::small_cfg;
use streamkv::harness::{generate_stream, record, replay, run, RunOptions, Source};
use streamkv::scoresrc::{load_trace, save_trace, Regime, TraceReader};
use streamkv::Error;

#[test]
fn replay_reproduces_the_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [0, 7] {
        let cfg = small_cfg(seed, 40);
        let path = dir.path().join(format!("s{seed}.skvt"));
        let live = record(&cfg, &Source::default(), 12, &path).unwrap();
        let replayed = replay(&cfg, &path).unwrap();
        assert!(live.same_outcome(&replayed), "seed {seed}");
        assert_eq!(live.seed_fingerprint, replayed.seed_fingerprint);
    }
}

#[test]
fn toy_stream_survives_a_save_load_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(3, 40);
    let records: Vec<_> = generate_stream(3, 5, &cfg, Regime::Structured)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let a = dir.path().join("a.skvt");
    let b = dir.path().join("b.skvt");
    save_trace(&records, &a).unwrap();
    let loaded = load_trace(&a).unwrap();
    assert_eq!(loaded, records);
    save_trace(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let reader = TraceReader::open(&a).unwrap();
    assert_eq!(reader.frame_count(), 5);
    assert_eq!(reader.dims().num_layers, 4);
}

#[test]
fn replay_rejects_a_trace_for_another_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.skvt");
    record(&small_cfg(1, 40), &Source::default(), 3, &path).unwrap();
    let other = streamkv::PipelineConfig {
        num_layers: 5,
        ..small_cfg(1, 40)
    }
    .with_uniform_layer_budget(40);
    let err = replay(&other, &path).unwrap_err();
    assert!(matches!(err, Error::TraceFormat { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn truncated_trace_is_a_trace_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.skvt");
    let cfg = small_cfg(1, 40);
    record(&cfg, &Source::default(), 3, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let err = replay(&cfg, &path).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err:?}");
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let cfg = small_cfg(5, 40);
    let opts = RunOptions {
        frames: Some(10),
        record_to: None,
    };
    let a = run(&cfg, &Source::default(), &opts).unwrap();
    let b = run(&cfg, &Source::default(), &opts).unwrap();
    assert!(a.same_outcome(&b));
    let mut b = b;
    b.summary.wall_time_secs = a.summary.wall_time_secs;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn report_json_round_trips() {
    let cfg = small_cfg(5, 40);
    let a = run(&cfg, &Source::default(), &RunOptions::default()).unwrap();
    let back = streamkv::harness::RunReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(a, back);
}
