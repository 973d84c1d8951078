//! Frame sources driving the pipeline: the toy model or a recorded trace.

use std::io::Read;
use std::path::PathBuf;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::scoresrc::{FrameActivations, Regime, ToyModel, TraceReader};
use crate::types::LayerCache;

/// Anything that yields one frame of per-layer activations at a time.
pub trait FrameSource {
    /// Next frame, computed against the current caches when the source is
    /// live. `None` once the source is exhausted.
    fn next_frame(&mut self, caches: &[LayerCache]) -> Option<Result<Vec<FrameActivations>>>;
}

/// Live toy transformer producing a fixed number of frames.
pub struct ToySource {
    model: ToyModel,
    remaining: usize,
}

impl ToySource {
    pub fn new(cfg: &PipelineConfig, regime: Regime, frames: usize) -> Result<Self> {
        Ok(Self {
            model: ToyModel::new(cfg, regime)?,
            remaining: frames,
        })
    }
}

impl FrameSource for ToySource {
    fn next_frame(&mut self, caches: &[LayerCache]) -> Option<Result<Vec<FrameActivations>>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.model.next_frame(caches))
    }
}

/// Replays a trace, grouping its records into frames.
pub struct TraceSource<R: Read> {
    reader: TraceReader<R>,
    remaining: usize,
}

impl<R: Read> TraceSource<R> {
    /// Checks that the trace matches the config's layer and token counts.
    pub fn new(
        reader: TraceReader<R>,
        cfg: &PipelineConfig,
        max_frames: Option<usize>,
    ) -> Result<Self> {
        let dims = reader.dims();
        if reader.frame_count() > 0
            && (dims.num_layers != cfg.num_layers || dims.tokens_per_frame != cfg.tokens_per_frame)
        {
            return Err(Error::TraceFormat {
                offset: 8,
                reason: format!(
                    "trace has {} layers × {} tokens, config expects {} × {}",
                    dims.num_layers, dims.tokens_per_frame, cfg.num_layers, cfg.tokens_per_frame
                ),
            });
        }
        let remaining = max_frames.map_or(reader.frame_count(), |m| m.min(reader.frame_count()));
        Ok(Self { reader, remaining })
    }
}

impl<R: Read> FrameSource for TraceSource<R> {
    fn next_frame(&mut self, _caches: &[LayerCache]) -> Option<Result<Vec<FrameActivations>>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let layers = self.reader.dims().num_layers;
        Some(self.reader.by_ref().take(layers).collect())
    }
}

/// Where a run takes its frames from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Toy { regime: Regime },
    Trace(PathBuf),
}

impl Default for Source {
    fn default() -> Self {
        Source::Toy {
            regime: Regime::default(),
        }
    }
}

/// Synthetic stream of `frames` frames from the toy model seeded with `seed`.
/// The toy attends to the compressed caches, so the pipeline runs alongside.
pub fn generate_stream(
    seed: u64,
    frames: usize,
    cfg: &PipelineConfig,
    regime: Regime,
) -> Result<Vec<Vec<FrameActivations>>> {
    let cfg = PipelineConfig {
        rng_seed: seed,
        ..cfg.clone()
    };
    let pipeline = Pipeline::new(cfg.clone())?;
    let mut state = pipeline.initial_state();
    let mut source = ToySource::new(&cfg, regime, frames)?;
    let mut out = Vec::with_capacity(frames);
    while let Some(frame) = source.next_frame(&state.caches) {
        let frame = frame?;
        pipeline.process_frame(&mut state, &frame)?;
        out.push(frame);
    }
    Ok(out)
}
