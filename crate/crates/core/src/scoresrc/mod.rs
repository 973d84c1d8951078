//! Per-frame, per-layer activations and raw FFN-residual importance scores,
//! produced by a deterministic toy transformer ([`toy`]) or replayed from a
//! recorded trace ([`trace`]).

pub mod toy;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use toy::{
    attention_weights, ffn_residual, ffn_residual_score, toy_block_forward, toy_block_forward_full,
    BlockOutput, Regime, ToyBlockParams, ToyDims, ToyModel,
};
pub use trace::{load_trace, save_trace, TraceDims, TraceReader, TraceWriter};

/// Activations of one frame at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameActivations {
    pub frame_index: usize,
    pub layer_index: usize,
    /// Post-attention hidden states, `M × model_dim`; the raw scores are the
    /// FFN residual magnitudes of these rows.
    pub hidden: Matrix,
    /// Keys of the frame's tokens, `M × key_dim`.
    pub keys: Matrix,
    /// Values of the frame's tokens, `M × key_dim`.
    pub values: Matrix,
    pub raw_scores: Vec<f64>,
}

impl FrameActivations {
    pub fn tokens(&self) -> usize {
        self.raw_scores.len()
    }

    pub fn key_dim(&self) -> usize {
        self.keys.cols()
    }

    /// Row counts agree, key/value widths agree and every entry is finite;
    /// raw scores are non-negative.
    pub fn validate(&self) -> Result<()> {
        let m = self.raw_scores.len();
        for (context, rows) in [
            ("hidden rows", self.hidden.rows()),
            ("key rows", self.keys.rows()),
            ("value rows", self.values.rows()),
        ] {
            if rows != m {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: m,
                    found: rows,
                });
            }
        }
        if self.values.cols() != self.keys.cols() {
            return Err(Error::DimensionMismatch {
                context: "value width",
                expected: self.keys.cols(),
                found: self.values.cols(),
            });
        }
        if !(self.hidden.is_finite() && self.keys.is_finite() && self.values.is_finite()) {
            return Err(Error::NonFiniteActivation("frame activations"));
        }
        if let Some(i) = self
            .raw_scores
            .iter()
            .position(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(if self.raw_scores[i].is_finite() {
                Error::NegativeInput(i)
            } else {
                Error::NonFiniteActivation("raw scores")
            });
        }
        Ok(())
    }
}
