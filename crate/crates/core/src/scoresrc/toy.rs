//! Deterministic toy causal transformer.
//!
//! Each block projects the frame's hidden states to queries, keys and values,
//! attends over the layer's cached keys followed by the frame's own keys
//! (full attention inside the frame, causal across frames), adds the
//! projected attention output to the residual stream, and scores every token
//! by the norm of its scaled FFN residual `‖λ₂ · FFN(LN(h))‖₂`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FrameActivations;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::types::{LayerCache, TokenLayout};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub model_dim: usize,
    pub key_dim: usize,
    pub ffn_dim: usize,
}

impl ToyDims {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            model_dim: cfg.model_dim,
            key_dim: cfg.key_dim,
            ffn_dim: cfg.ffn_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBlockParams {
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    /// `model_dim × ffn_dim`
    pub ffn_w1: Matrix,
    /// `ffn_dim × model_dim`
    pub ffn_w2: Matrix,
    /// Residual scale of the FFN branch.
    pub lambda2: f64,
    /// `model_dim × key_dim`
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    /// `key_dim × model_dim`, maps the attention output back to the residual stream.
    pub wo: Matrix,
}

impl ToyBlockParams {
    /// Normal weights with variance `1 / model_dim`; unit gain and zero bias.
    pub fn random(dims: ToyDims, lambda2: f64, rng: &mut impl Rng) -> Self {
        let std = (1.0 / dims.model_dim as f64).sqrt();
        let mut mat = |r: usize, c: usize| {
            let data = (0..r * c)
                .map(|_| std * std_normal(&mut *rng))
                .collect::<Vec<f64>>();
            Matrix::from_vec(r, c, data)
        };
        let ffn_w1 = mat(dims.model_dim, dims.ffn_dim);
        let ffn_w2 = mat(dims.ffn_dim, dims.model_dim);
        let wq = mat(dims.model_dim, dims.key_dim);
        let wk = mat(dims.model_dim, dims.key_dim);
        let wv = mat(dims.model_dim, dims.key_dim);
        let wo = mat(dims.key_dim, dims.model_dim);
        Self {
            ln_gain: vec![1.0; dims.model_dim],
            ln_bias: vec![0.0; dims.model_dim],
            ffn_w1,
            ffn_w2,
            lambda2,
            wq,
            wk,
            wv,
            wo,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.ln_gain.len()
    }

    pub fn key_dim(&self) -> usize {
        self.wk.cols()
    }

    /// Parameter shapes agree, everything is finite and `lambda2 > 0`.
    pub fn validate(&self) -> Result<()> {
        let d_model = self.model_dim();
        let d = self.key_dim();
        let checks = [
            ("ln_bias", self.ln_bias.len(), d_model),
            ("ffn_w1 rows", self.ffn_w1.rows(), d_model),
            ("ffn_w2 rows", self.ffn_w2.rows(), self.ffn_w1.cols()),
            ("ffn_w2 cols", self.ffn_w2.cols(), d_model),
            ("wq rows", self.wq.rows(), d_model),
            ("wk rows", self.wk.rows(), d_model),
            ("wv rows", self.wv.rows(), d_model),
            ("wq cols", self.wq.cols(), d),
            ("wv cols", self.wv.cols(), d),
            ("wo rows", self.wo.rows(), d),
            ("wo cols", self.wo.cols(), d_model),
        ];
        for (context, found, expected) in checks {
            if found != expected {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        let finite = self
            .ln_gain
            .iter()
            .chain(&self.ln_bias)
            .all(|v| v.is_finite())
            && [
                &self.ffn_w1,
                &self.ffn_w2,
                &self.wq,
                &self.wk,
                &self.wv,
                &self.wo,
            ]
            .iter()
            .all(|m| m.is_finite());
        if !finite || !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return Err(Error::NonFiniteActivation("block parameters"));
        }
        Ok(())
    }
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

fn finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

/// The scaled FFN residual `λ₂ · W₂ · gelu(W₁ · LN(h))` of one hidden row.
pub fn ffn_residual(hidden_row: &[f64], params: &ToyBlockParams) -> Result<Vec<f64>> {
    if hidden_row.len() != params.model_dim() {
        return Err(Error::DimensionMismatch {
            context: "hidden row",
            expected: params.model_dim(),
            found: hidden_row.len(),
        });
    }
    finite(hidden_row, "hidden state")?;
    let normed = layer_norm(hidden_row, &params.ln_gain, &params.ln_bias);
    finite(&normed, "layer norm")?;
    let inner: Vec<f64> = params
        .ffn_w1
        .left_mul(&normed)
        .into_iter()
        .map(gelu)
        .collect();
    finite(&inner, "ffn hidden")?;
    let out: Vec<f64> = params
        .ffn_w2
        .left_mul(&inner)
        .into_iter()
        .map(|v| params.lambda2 * v)
        .collect();
    finite(&out, "ffn output")?;
    Ok(out)
}

/// Importance score of one token: the L2 norm of its scaled FFN residual.
pub fn ffn_residual_score(hidden_row: &[f64], params: &ToyBlockParams) -> Result<f64> {
    let s = norm(&ffn_residual(hidden_row, params)?);
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFiniteActivation("ffn score"))
    }
}

/// Softmax attention weights of every query over `keys`, scaled by
/// `1/sqrt(d)`. Row `i` sums to one.
pub fn attention_weights(queries: &Matrix, keys: &[&[f64]]) -> Matrix {
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut w = Matrix::zeros(queries.rows(), keys.len());
    for i in 0..queries.rows() {
        let q = queries.row(i);
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| crate::linalg::dot(q, k) * scale)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        for (j, e) in exp.into_iter().enumerate() {
            w.set(i, j, e / z);
        }
    }
    w
}

/// Activations plus the hidden state handed to the next block.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub activations: FrameActivations,
    pub attention: Matrix,
    pub next_hidden: Matrix,
}

/// Runs one block over a frame and keeps the intermediate attention weights.
pub fn toy_block_forward_full(
    frame_index: usize,
    frame_hidden: &Matrix,
    cache: &LayerCache,
    params: &ToyBlockParams,
) -> Result<BlockOutput> {
    if frame_hidden.cols() != params.model_dim() {
        return Err(Error::DimensionMismatch {
            context: "frame hidden width",
            expected: params.model_dim(),
            found: frame_hidden.cols(),
        });
    }
    if let Some(d) = cache.key_dim() {
        if d != params.key_dim() {
            return Err(Error::DimensionMismatch {
                context: "cached key width",
                expected: params.key_dim(),
                found: d,
            });
        }
    }
    if !frame_hidden.is_finite() {
        return Err(Error::NonFiniteActivation("frame input"));
    }

    let queries = frame_hidden.matmul(&params.wq);
    let keys = frame_hidden.matmul(&params.wk);
    let values = frame_hidden.matmul(&params.wv);

    let all_keys: Vec<&[f64]> = cache
        .entries
        .iter()
        .map(|t| t.key.as_slice())
        .chain(keys.iter_rows())
        .collect();
    let all_values: Vec<&[f64]> = cache
        .entries
        .iter()
        .map(|t| t.value.as_slice())
        .chain(values.iter_rows())
        .collect();
    let attention = attention_weights(&queries, &all_keys);

    let m = frame_hidden.rows();
    let d = params.key_dim();
    let mut hidden = frame_hidden.clone();
    let mut next_hidden = Matrix::zeros(m, params.model_dim());
    let mut raw_scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut attended = vec![0.0; d];
        for (w, v) in attention.row(i).iter().zip(&all_values) {
            for (a, x) in attended.iter_mut().zip(v.iter()) {
                *a += w * x;
            }
        }
        let projected = params.wo.left_mul(&attended);
        for (h, p) in hidden.row_mut(i).iter_mut().zip(projected) {
            *h += p;
        }
        let residual = ffn_residual(hidden.row(i), params)?;
        raw_scores.push(norm(&residual));
        for ((n, h), r) in next_hidden
            .row_mut(i)
            .iter_mut()
            .zip(hidden.row(i))
            .zip(residual)
        {
            *n = h + r;
        }
    }
    if !hidden.is_finite() {
        return Err(Error::NonFiniteActivation("attention output"));
    }

    Ok(BlockOutput {
        activations: FrameActivations {
            frame_index,
            layer_index: cache.layer_index,
            hidden,
            keys,
            values,
            raw_scores,
        },
        attention,
        next_hidden,
    })
}

pub fn toy_block_forward(
    frame_index: usize,
    frame_hidden: &Matrix,
    cache: &LayerCache,
    params: &ToyBlockParams,
) -> Result<FrameActivations> {
    toy_block_forward_full(frame_index, frame_hidden, cache, params).map(|o| o.activations)
}

/// How the toy model lays out patch inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Regime {
    /// Every patch is a noisy copy of its own fixed embedding.
    Plain,
    /// The top-left grid quadrant is a flat region sharing one low-salience
    /// direction; the bottom-right quadrant is textured with fresh random
    /// inputs every frame.
    #[default]
    Structured,
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(Regime::Plain),
            "structured" => Ok(Regime::Structured),
            other => Err(format!(
                "unknown regime {other:?} (expected plain or structured)"
            )),
        }
    }
}

const FLAT_NOISE: f64 = 0.05;
const PATCH_NOISE: f64 = 0.3;
const SPECIAL_NOISE: f64 = 0.1;
const FLAT_DIRECTION_CANDIDATES: usize = 256;

/// Stack of toy blocks plus a seeded generator of frame inputs.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub dims: ToyDims,
    pub layout: TokenLayout,
    pub blocks: Vec<ToyBlockParams>,
    pub regime: Regime,
    special_embeddings: Matrix,
    patch_embeddings: Matrix,
    flat_direction: Vec<f64>,
    frame_rng: ChaCha8Rng,
    next_frame: usize,
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * std_normal(&mut *rng)).collect()
}

impl ToyModel {
    pub fn new(cfg: &PipelineConfig, regime: Regime) -> Result<Self> {
        cfg.validate()?;
        let dims = ToyDims::from_config(cfg);
        let layout = TokenLayout::for_tokens(cfg.tokens_per_frame);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let blocks: Vec<_> = (0..cfg.num_layers)
            .map(|_| ToyBlockParams::random(dims, cfg.residual_scale, &mut rng))
            .collect();
        let special_embeddings = Matrix::from_rows(
            &(0..layout.specials())
                .map(|_| normal_vec(&mut rng, dims.model_dim, 1.0))
                .collect::<Vec<_>>(),
        );
        let patch_embeddings = Matrix::from_rows(
            &(0..layout.patches())
                .map(|_| normal_vec(&mut rng, dims.model_dim, 1.0))
                .collect::<Vec<_>>(),
        );

        // Low-salience direction for flat regions: the candidate input with
        // the smallest first-layer score.
        let mut flat_direction = normal_vec(&mut rng, dims.model_dim, 1.0);
        let mut best = f64::INFINITY;
        for _ in 0..FLAT_DIRECTION_CANDIDATES {
            let cand = normal_vec(&mut rng, dims.model_dim, 1.0);
            let s = ffn_residual_score(&cand, &blocks[0])?;
            if s < best {
                best = s;
                flat_direction = cand;
            }
        }

        let mut frame_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        frame_rng.set_stream(1);
        Ok(Self {
            dims,
            layout,
            blocks,
            regime,
            special_embeddings,
            patch_embeddings,
            flat_direction,
            frame_rng,
            next_frame: 0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn frames_generated(&self) -> usize {
        self.next_frame
    }

    /// Whether the patch at `(row, col)` belongs to the flat region.
    pub fn in_flat_region(&self, row: usize, col: usize) -> bool {
        self.regime == Regime::Structured
            && self.layout.grid_rows >= 2
            && self.layout.grid_cols >= 2
            && row < self.layout.grid_rows / 2
            && col < self.layout.grid_cols / 2
    }

    fn in_textured_region(&self, row: usize, col: usize) -> bool {
        self.regime == Regime::Structured
            && self.layout.grid_rows >= 2
            && self.layout.grid_cols >= 2
            && row >= self.layout.grid_rows / 2
            && col >= self.layout.grid_cols / 2
    }

    /// Input hidden states of the next frame, `M × model_dim`.
    fn frame_input(&mut self) -> Matrix {
        let d = self.dims.model_dim;
        let mut x = Matrix::zeros(self.layout.len(), d);
        for s in 0..self.layout.specials() {
            let noise = normal_vec(&mut self.frame_rng, d, SPECIAL_NOISE);
            for ((o, e), n) in x
                .row_mut(s)
                .iter_mut()
                .zip(self.special_embeddings.row(s))
                .zip(noise)
            {
                *o = e + n;
            }
        }
        for r in 0..self.layout.grid_rows {
            for c in 0..self.layout.grid_cols {
                let p = r * self.layout.grid_cols + c;
                let row: Vec<f64> = if self.in_flat_region(r, c) {
                    let noise = normal_vec(&mut self.frame_rng, d, FLAT_NOISE);
                    self.flat_direction
                        .iter()
                        .zip(noise)
                        .map(|(f, n)| f + n)
                        .collect()
                } else if self.in_textured_region(r, c) {
                    let amp = self.frame_rng.random_range(0.5..2.0);
                    normal_vec(&mut self.frame_rng, d, amp)
                } else {
                    let noise = normal_vec(&mut self.frame_rng, d, PATCH_NOISE);
                    self.patch_embeddings
                        .row(p)
                        .iter()
                        .zip(noise)
                        .map(|(e, n)| e + n)
                        .collect()
                };
                x.row_mut(self.layout.patch_index(r, c))
                    .copy_from_slice(&row);
            }
        }
        x
    }

    /// Runs every block over the next frame, attending to `caches`.
    pub fn next_frame(&mut self, caches: &[LayerCache]) -> Result<Vec<FrameActivations>> {
        if caches.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: self.blocks.len(),
                found: caches.len(),
            });
        }
        let t = self.next_frame;
        let mut hidden = self.frame_input();
        let mut out = Vec::with_capacity(self.blocks.len());
        for (params, cache) in self.blocks.iter().zip(caches) {
            let block = toy_block_forward_full(t, &hidden, cache, params)?;
            hidden = block.next_hidden;
            out.push(block.activations);
        }
        self.next_frame += 1;
        Ok(out)
    }
}
