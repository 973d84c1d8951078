//! Bounded-memory streaming KV-cache compression.
//!
//! Every frame of a causal streaming transformer appends `M` tokens to each
//! layer's KV cache. This crate keeps each layer under a hard token budget by
//!
//! 1. scoring tokens with the FFN-residual magnitude ([`scoresrc`]),
//! 2. rewarding tokens whose rank is stable across neighbouring layers
//!    ([`clces`]),
//! 3. smoothing and mixing those scores with key diversity ([`pipeline`]),
//! 4. splitting the evictable tokens into retain / merge / evict tiers and
//!    folding merge candidates into their nearest retained neighbour on the
//!    key manifold ([`hcc`]).
//!
//! The [`harness`] module drives the pipeline from a deterministic toy
//! transformer or a recorded trace and produces reports and ablation sweeps.

pub mod clces;
pub mod config;
pub mod error;
pub mod harness;
pub mod hcc;
pub mod linalg;
pub mod pipeline;
pub mod scoresrc;
pub mod types;

pub use config::{validate_config, ConfigViolation, PipelineConfig};
pub use error::{Error, Result};
pub use types::{GridPos, LayerCache, TokenId, TokenKind, TokenLayout, TokenRecord};
