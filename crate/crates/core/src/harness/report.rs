//! Run reports: JSON, per-frame CSV series and an aligned text summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::{FrameDiagnostics, StreamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    /// Largest total of cached tokens over all layers after any frame.
    pub peak_cache_tokens: usize,
    /// Sum of the per-layer budgets.
    pub budget_capacity: usize,
    /// Evicted tokens, including merge candidates that found no target.
    pub total_evicted: usize,
    /// Merge candidates folded into a target.
    pub total_merged: usize,
    pub total_demoted: usize,
    /// Mean absorbed count over cached tokens that absorbed at least one token.
    pub mean_absorbed_per_target: f64,
    pub mean_consistency: f64,
    /// Mean over frames and layers of the consistency standard deviation.
    pub mean_cons_dispersion: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_echo: PipelineConfig,
    pub per_frame: Vec<FrameDiagnostics>,
    pub summary: RunSummary,
    /// SHA-256 of the activation stream, in trace byte order.
    pub seed_fingerprint: String,
}

impl RunReport {
    /// Report of the frames processed so far in `state`.
    pub fn build(
        cfg: &PipelineConfig,
        state: &StreamState,
        fingerprint: String,
        wall_time_secs: f64,
    ) -> Self {
        let frames = &state.diagnostics;
        let layers = || frames.iter().flat_map(|f| &f.layers);
        let n_layer_frames = layers().count().max(1) as f64;
        let targets: Vec<u32> = state
            .caches
            .iter()
            .flat_map(|c| &c.entries)
            .map(|t| t.absorbed_count)
            .filter(|&a| a > 0)
            .collect();
        let summary = RunSummary {
            frames: frames.len(),
            peak_cache_tokens: frames
                .iter()
                .map(FrameDiagnostics::cached_tokens)
                .max()
                .unwrap_or(0),
            budget_capacity: cfg.layer_budgets().iter().sum(),
            total_evicted: layers()
                .map(|l| l.n_evict + l.merge_demotions + l.zero_score_skips)
                .sum(),
            total_merged: layers().map(|l| l.merged).sum(),
            total_demoted: layers().map(|l| l.merge_demotions).sum(),
            mean_absorbed_per_target: if targets.is_empty() {
                0.0
            } else {
                targets.iter().map(|&a| f64::from(a)).sum::<f64>() / targets.len() as f64
            },
            mean_consistency: layers().map(|l| l.mean_consistency).sum::<f64>() / n_layer_frames,
            mean_cons_dispersion: layers().map(|l| l.cons_dispersion).sum::<f64>() / n_layer_frames,
            wall_time_secs,
        };
        Self {
            config_echo: cfg.clone(),
            per_frame: frames.clone(),
            summary,
            seed_fingerprint: fingerprint,
        }
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        let mut a = self.clone();
        a.summary.wall_time_secs = other.summary.wall_time_secs;
        a == *other
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.into()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.into()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One row per frame and layer.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            frame: usize,
            layer: usize,
            cache_size: usize,
            n_retain: usize,
            n_merge: usize,
            n_evict: usize,
            n_protected: usize,
            merged: usize,
            merge_demotions: usize,
            zero_score_skips: usize,
            mean_consistency: f64,
            cons_dispersion: f64,
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for f in &self.per_frame {
            for l in &f.layers {
                w.serialize(Row {
                    frame: f.frame,
                    layer: l.layer,
                    cache_size: l.cache_size,
                    n_retain: l.n_retain,
                    n_merge: l.n_merge,
                    n_evict: l.n_evict,
                    n_protected: l.n_protected,
                    merged: l.merged,
                    merge_demotions: l.merge_demotions,
                    zero_score_skips: l.zero_score_skips,
                    mean_consistency: l.mean_consistency,
                    cons_dispersion: l.cons_dispersion,
                })
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-frame totals over layers as an aligned table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9}",
            "frame", "cached", "retain", "merge", "evict", "protect", "mean_cons"
        );
        for f in &self.per_frame {
            let sum = |g: fn(&crate::pipeline::LayerDiagnostics) -> usize| {
                f.layers.iter().map(g).sum::<usize>()
            };
            let cons = f.layers.iter().map(|l| l.mean_consistency).sum::<f64>()
                / f.layers.len().max(1) as f64;
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9.4}",
                f.frame,
                f.cached_tokens(),
                sum(|l| l.n_retain),
                sum(|l| l.n_merge),
                sum(|l| l.n_evict),
                sum(|l| l.n_protected),
                cons
            );
        }
        let m = &self.summary;
        let _ = writeln!(
            s,
            "frames {}  peak {}/{}  evicted {}  merged {}  demoted {}  absorbed/target {:.3}  wall {:.3}s",
            m.frames,
            m.peak_cache_tokens,
            m.budget_capacity,
            m.total_evicted,
            m.total_merged,
            m.total_demoted,
            m.mean_absorbed_per_target,
            m.wall_time_secs
        );
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
