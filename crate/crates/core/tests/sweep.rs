mod common;

use common::small_cfg;
use streamkv::harness::{run, sweep, RunOptions, Source, SweepAxis};
use streamkv::scoresrc::Regime;
use streamkv::PipelineConfig;

fn values(axis: SweepAxis) -> Vec<String> {
    axis.default_values()
}

#[test]
fn lambda_zero_cell_equals_the_baseline_run() {
    let base = small_cfg(8, 40);
    let table = sweep(
        &base,
        SweepAxis::Lambda,
        &values(SweepAxis::Lambda),
        12,
        Regime::Structured,
    )
    .unwrap();
    assert_eq!(table.cells.len(), 5);
    let baseline_cfg = PipelineConfig {
        consistency_weight: 0.0,
        ..base
    };
    let baseline = run(
        &baseline_cfg,
        &Source::default(),
        &RunOptions {
            frames: Some(12),
            record_to: None,
        },
    )
    .unwrap();
    assert!(table.cell("0").unwrap().report.same_outcome(&baseline));
}

#[test]
fn merge_ratio_zero_merges_nothing() {
    let base = small_cfg(8, 40);
    let table = sweep(
        &base,
        SweepAxis::MergeRatio,
        &values(SweepAxis::MergeRatio),
        12,
        Regime::Structured,
    )
    .unwrap();
    assert_eq!(table.cells.len(), 6);
    assert_eq!(table.cell("0").unwrap().report.summary.total_merged, 0);
    assert!(table.cell("0.3").unwrap().report.summary.total_merged > 0);
}

#[test]
fn component_grid_has_four_cells() {
    let base = small_cfg(8, 40);
    let table = sweep(
        &base,
        SweepAxis::Components,
        &values(SweepAxis::Components),
        6,
        Regime::Structured,
    )
    .unwrap();
    let labels: Vec<_> = table.cells.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["none", "hcc", "clces", "both"]);
    assert_eq!(values(SweepAxis::Window), ["3", "5", "7", "10"]);
}

#[test]
fn invalid_cell_fails_the_sweep() {
    let base = small_cfg(8, 40);
    let err = sweep(
        &base,
        SweepAxis::Lambda,
        &["0.5".into(), "-1".into()],
        3,
        Regime::Structured,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn sweep_writes_its_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let table = sweep(
        &small_cfg(1, 40),
        SweepAxis::Window,
        &["3".into(), "5".into()],
        4,
        Regime::Plain,
    )
    .unwrap();
    table.write_dir(dir.path()).unwrap();
    for f in ["sweep.json", "table.txt", "cell_3.json", "cell_5.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
