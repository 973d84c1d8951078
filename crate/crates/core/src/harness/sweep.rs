//! Ablation sweeps over one configuration axis at a time.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, RunOptions, RunReport, Source};
use crate::config::PipelineConfig;
use crate::error::{ConfigViolation, Error, Result};
use crate::scoresrc::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Lambda,
    Window,
    MergeRatio,
    /// Toggles consistency weighting and merging independently.
    Components,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Window => "window",
            SweepAxis::MergeRatio => "merge-ratio",
            SweepAxis::Components => "components",
        }
    }

    /// Values swept when the caller gives none.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::Lambda => &["0", "0.25", "0.5", "0.75", "1.0"],
            SweepAxis::Window => &["3", "5", "7", "10"],
            SweepAxis::MergeRatio => &["0", "0.05", "0.1", "0.15", "0.2", "0.3"],
            SweepAxis::Components => &["none", "hcc", "clces", "both"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "window" => Ok(SweepAxis::Window),
            "merge-ratio" => Ok(SweepAxis::MergeRatio),
            "components" => Ok(SweepAxis::Components),
            other => Err(Error::ConfigParse(format!("unknown sweep axis `{other}`"))),
        }
    }
}

fn bad_value(field: &'static str, value: &str) -> Error {
    Error::InvalidConfig(vec![ConfigViolation {
        field,
        message: format!("cannot use `{value}` as a sweep value"),
    }])
}

fn parse_f64(field: &'static str, value: &str) -> Result<f64> {
    value.trim().parse().map_err(|_| bad_value(field, value))
}

/// The base config with one axis set to `value`, validated.
///
/// On the components axis, `hcc` keeps merging with consistency weighting
/// off, `clces` keeps weighting with merging off, and `none` disables both.
pub fn cell_config(base: &PipelineConfig, axis: SweepAxis, value: &str) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Lambda => cfg.consistency_weight = parse_f64("consistency_weight", value)?,
        SweepAxis::Window => {
            cfg.window_size = value
                .trim()
                .parse()
                .map_err(|_| bad_value("window_size", value))?
        }
        SweepAxis::MergeRatio => cfg.merge_ratio = parse_f64("merge_ratio", value)?,
        SweepAxis::Components => {
            let (clces, hcc) = match value.trim() {
                "none" => (false, false),
                "hcc" => (false, true),
                "clces" => (true, false),
                "both" => (true, true),
                _ => return Err(bad_value("components", value)),
            };
            if !clces {
                cfg.consistency_weight = 0.0;
            }
            if !hcc {
                cfg.merge_ratio = 0.0;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub label: String,
    pub config: PipelineConfig,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

/// Runs one toy simulation per value; cells run in parallel.
pub fn sweep(
    base: &PipelineConfig,
    axis: SweepAxis,
    values: &[String],
    frames: usize,
    regime: Regime,
) -> Result<SweepTable> {
    let configs = values
        .iter()
        .map(|v| cell_config(base, axis, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let source = Source::Toy { regime };
    let opts = RunOptions {
        frames: Some(frames),
        record_to: None,
    };
    let cells = configs
        .into_par_iter()
        .map(|(label, config)| {
            let report = run(&config, &source, &opts)?;
            Ok(SweepCell {
                label,
                config,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { axis, cells })
}

impl SweepTable {
    pub fn cell(&self, label: &str) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>12} {:>8} {:>9} {:>8} {:>8} {:>10} {:>10}",
            self.axis.as_str(),
            "peak",
            "evicted",
            "merged",
            "demoted",
            "mean_cons",
            "cons_sd"
        );
        for c in &self.cells {
            let m = &c.report.summary;
            let _ = writeln!(
                s,
                "{:>12} {:>8} {:>9} {:>8} {:>8} {:>10.4} {:>10.4}",
                c.label,
                m.peak_cache_tokens,
                m.total_evicted,
                m.total_merged,
                m.total_demoted,
                m.mean_consistency,
                m.mean_cons_dispersion
            );
        }
        s
    }

    /// Writes `sweep.json`, `table.txt` and one `cell_<label>.json` per cell.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.into()))?;
        std::fs::write(dir.join("sweep.json"), json)?;
        std::fs::write(dir.join("table.txt"), self.render_table())?;
        for c in &self.cells {
            c.report
                .write_json(dir.join(format!("cell_{}.json", c.label)))?;
        }
        Ok(())
    }
}
