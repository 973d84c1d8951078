//! `streamkv` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid config, 3 malformed trace, 4 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streamkv::harness::{self, RunOptions, Source, SweepAxis, DEFAULT_FRAMES};
use streamkv::scoresrc::Regime;
use streamkv::{Error, PipelineConfig, Result};

#[derive(Parser)]
#[command(
    name = "streamkv",
    version,
    about = "Streaming KV-cache compression simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a stream and report cache statistics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replay this trace instead of running the toy model.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        /// Overrides `rng_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "structured")]
        regime: Regime,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-frame, per-layer series here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one simulation per value of an axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// lambda | window | merge-ratio | components
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_FRAMES)]
        frames: usize,
        #[arg(long, default_value = "structured")]
        regime: Regime,
        /// Directory for `sweep.json`, `table.txt` and per-cell reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the toy model and save its activation stream.
    Record {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "structured")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feed a recorded trace through the pipeline.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(report: &harness::RunReport, out: Option<&PathBuf>) -> Result<()> {
    print!("{}", report.render_table());
    println!("fingerprint {}", report.seed_fingerprint);
    if let Some(p) = out {
        report.write_json(p)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            trace,
            frames,
            seed,
            regime,
            out,
            csv,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let source = trace.map_or(Source::Toy { regime }, Source::Trace);
            let report = harness::run(
                &cfg,
                &source,
                &RunOptions {
                    frames,
                    record_to: None,
                },
            )?;
            emit(&report, out.as_ref())?;
            if let Some(p) = csv {
                report.write_csv(p)?;
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            frames,
            regime,
            out,
        } => {
            let cfg = load_config(config.as_ref(), None)?;
            let values = if values.is_empty() {
                axis.default_values()
            } else {
                values
            };
            let table =
                harness::with_thread_limit(|| harness::sweep(&cfg, axis, &values, frames, regime))?;
            print!("{}", table.render_table());
            if let Some(dir) = out {
                table.write_dir(dir)?;
            }
        }
        Command::Record {
            config,
            frames,
            seed,
            regime,
            out,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let report = harness::record(&cfg, &Source::Toy { regime }, frames, &out)?;
            println!(
                "recorded {} frames to {}",
                report.summary.frames,
                out.display()
            );
            println!("fingerprint {}", report.seed_fingerprint);
        }
        Command::Replay { trace, config, out } => {
            let cfg = load_config(config.as_ref(), None)?;
            let report = harness::replay(&cfg, &trace)?;
            emit(&report, out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::InvalidConfig(v) = e.root() {
                for violation in v {
                    eprintln!("  {}: {}", violation.field, violation.message);
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
