//! Simulation harness: runs, record/replay, ablation sweeps and the
//! brute-force reference implementations used by the test suites.

pub mod oracles;
pub mod report;
pub mod stream;
pub mod sweep;

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::scoresrc::{FrameActivations, TraceDims, TraceReader, TraceWriter};

pub use report::{RunReport, RunSummary};
pub use stream::{generate_stream, FrameSource, Source, ToySource, TraceSource};
pub use sweep::{sweep, SweepAxis, SweepCell, SweepTable};

/// Frames simulated from the toy source when no count is given.
pub const DEFAULT_FRAMES: usize = 20;

/// Environment variable capping intra-frame parallelism (0 = automatic).
pub const THREADS_ENV: &str = "STREAMKV_THREADS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Frame limit; toy runs default to [`DEFAULT_FRAMES`], traces to all frames.
    pub frames: Option<usize>,
    /// Write the consumed activation stream to this trace path.
    pub record_to: Option<PathBuf>,
}

/// Thread count from [`THREADS_ENV`]; `None` means automatic.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` on a pool sized by [`THREADS_ENV`], or on the global pool.
pub fn with_thread_limit<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match threads_from_env()
        .and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok())
    {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// SHA-256 over an activation stream, fed in trace byte order: per record the
/// frame and layer indices as little-endian `u32`, then hidden states, keys,
/// values and raw scores as little-endian `f64`.
#[derive(Debug, Clone, Default)]
pub struct StreamFingerprint(Sha256);

impl StreamFingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, frame: &[FrameActivations]) {
        let h = &mut self.0;
        for a in frame {
            h.update((a.frame_index as u32).to_le_bytes());
            h.update((a.layer_index as u32).to_le_bytes());
            for v in a
                .hidden
                .as_slice()
                .iter()
                .chain(a.keys.as_slice())
                .chain(a.values.as_slice())
                .chain(&a.raw_scores)
            {
                h.update(v.to_le_bytes());
            }
        }
    }

    /// Lowercase hex digest of everything fed so far.
    pub fn hex(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

/// Drives the pipeline from `source` until it is exhausted.
pub fn run_source(
    cfg: &PipelineConfig,
    source: &mut dyn FrameSource,
    record_to: Option<&Path>,
) -> Result<RunReport> {
    let start = Instant::now();
    let pipeline = Pipeline::new(cfg.clone())?;
    let mut state = pipeline.initial_state();
    let mut fingerprint = StreamFingerprint::new();
    let mut recorder = None;
    while let Some(frame) = source.next_frame(&state.caches) {
        let frame = frame?;
        fingerprint.update(&frame);
        if let Some(path) = record_to {
            if recorder.is_none() {
                let dims = frame
                    .first()
                    .map(|a| TraceDims::of(a, frame.len()))
                    .unwrap_or_default();
                recorder = Some(TraceWriter::create(path, dims)?);
            }
            for a in &frame {
                recorder.as_mut().expect("created above").write(a)?;
            }
        }
        pipeline.process_frame(&mut state, &frame)?;
    }
    match recorder {
        Some(w) => {
            w.finish()?;
        }
        None => {
            if let Some(path) = record_to {
                TraceWriter::create(path, TraceDims::default())?.finish()?;
            }
        }
    }
    Ok(RunReport::build(
        cfg,
        &state,
        fingerprint.hex(),
        start.elapsed().as_secs_f64(),
    ))
}

/// Runs a full simulation from the toy model or a trace.
pub fn run(cfg: &PipelineConfig, source: &Source, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    with_thread_limit(|| match source {
        Source::Toy { regime } => {
            let frames = opts.frames.unwrap_or(DEFAULT_FRAMES);
            let mut src = ToySource::new(cfg, *regime, frames)?;
            run_source(cfg, &mut src, opts.record_to.as_deref())
        }
        Source::Trace(path) => {
            let reader = TraceReader::open(path).map_err(|e| match e {
                Error::Io(io) => Error::TraceFormat {
                    offset: 0,
                    reason: format!("{}: {io}", path.display()),
                },
                e => e,
            })?;
            let mut src = TraceSource::new(reader, cfg, opts.frames)?;
            run_source(cfg, &mut src, opts.record_to.as_deref())
        }
    })
}

/// Runs the toy model and records its activation stream to `out`.
pub fn record(
    cfg: &PipelineConfig,
    source: &Source,
    frames: usize,
    out: impl AsRef<Path>,
) -> Result<RunReport> {
    run(
        cfg,
        source,
        &RunOptions {
            frames: Some(frames),
            record_to: Some(out.as_ref().to_path_buf()),
        },
    )
}

/// Replays a trace through the pipeline.
pub fn replay(cfg: &PipelineConfig, trace: impl AsRef<Path>) -> Result<RunReport> {
    run(
        cfg,
        &Source::Trace(trace.as_ref().to_path_buf()),
        &RunOptions::default(),
    )
}
