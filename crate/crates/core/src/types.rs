//! Cached token records, per-layer caches and the per-frame token layout.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Patch,
    Camera,
    Register,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub row: u32,
    pub col: u32,
}

/// One cached token of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: TokenId,
    pub frame_index: usize,
    pub kind: TokenKind,
    pub grid_pos: Option<GridPos>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub raw_score: f64,
    /// Consistency-enhanced score. For merge targets this accumulates the
    /// scores of every absorbed token.
    pub enhanced_score: f64,
    pub protected_flag: bool,
    /// Number of original tokens folded into this one.
    pub absorbed_count: u32,
}

impl TokenRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        token_id: TokenId,
        frame_index: usize,
        kind: TokenKind,
        grid_pos: Option<GridPos>,
        key: Vec<f64>,
        value: Vec<f64>,
        raw_score: f64,
        enhanced_score: f64,
    ) -> Result<Self> {
        if key.is_empty() || key.len() != value.len() {
            return Err(Error::DimensionMismatch {
                context: "token value",
                expected: key.len(),
                found: value.len(),
            });
        }
        if grid_pos.is_some() != (kind == TokenKind::Patch) {
            return Err(Error::GridMismatch {
                expected: usize::from(kind == TokenKind::Patch),
                found: usize::from(grid_pos.is_some()),
            });
        }
        Ok(Self {
            token_id,
            frame_index,
            kind,
            grid_pos,
            key,
            value,
            raw_score,
            enhanced_score,
            protected_flag: false,
            absorbed_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.key.len()
    }
}

/// Ordered token store of one layer. Surviving tokens keep their insertion
/// order across compression steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCache {
    pub layer_index: usize,
    pub entries: Vec<TokenRecord>,
    pub budget: usize,
}

impl LayerCache {
    pub fn new(layer_index: usize, budget: usize) -> Self {
        Self {
            layer_index,
            entries: Vec::new(),
            budget,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key dimension of the cached tokens, if any are cached.
    pub fn key_dim(&self) -> Option<usize> {
        self.entries.first().map(TokenRecord::dim)
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|t| t.token_id)
    }

    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.entries.iter().position(|t| t.token_id == id)
    }

    pub fn get(&self, id: TokenId) -> Option<&TokenRecord> {
        self.entries.iter().find(|t| t.token_id == id)
    }

    pub fn push(&mut self, token: TokenRecord) -> Result<()> {
        if let Some(d) = self.key_dim() {
            if token.dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "cache key",
                    expected: d,
                    found: token.dim(),
                });
            }
        }
        self.entries.push(token);
        Ok(())
    }

    /// Checks the budget, id uniqueness and per-token invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.len() > self.budget {
            return Err(format!(
                "layer {} holds {} tokens over budget {}",
                self.layer_index,
                self.len(),
                self.budget
            ));
        }
        let mut seen = HashSet::with_capacity(self.len());
        for t in &self.entries {
            if !seen.insert(t.token_id) {
                return Err(format!("duplicate token id {}", t.token_id));
            }
            if t.key.len() != t.value.len() || t.key.is_empty() {
                return Err(format!("token {} has bad key/value dims", t.token_id));
            }
            if t.grid_pos.is_some() != (t.kind == TokenKind::Patch) {
                return Err(format!(
                    "token {} grid position disagrees with kind",
                    t.token_id
                ));
            }
        }
        if self
            .entries
            .windows(2)
            .any(|w| w[0].token_id >= w[1].token_id)
        {
            return Err("entries are not in insertion order".into());
        }
        Ok(())
    }
}

/// Token layout of one frame: camera tokens first, then register tokens, then
/// patch tokens in row-major grid order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub camera: usize,
    pub register: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl TokenLayout {
    /// Default layout for `m` tokens: one camera and three register tokens
    /// when `m >= 5`, the rest on the most square grid that tiles them.
    pub fn for_tokens(m: usize) -> Self {
        let (camera, register) = if m >= 5 { (1, 3) } else { (0, 0) };
        let patches = m - camera - register;
        let mut rows = (patches as f64).sqrt().floor() as usize;
        while rows > 1 && !patches.is_multiple_of(rows) {
            rows -= 1;
        }
        let rows = rows.max(usize::from(patches > 0));
        Self {
            camera,
            register,
            grid_rows: rows,
            grid_cols: patches.checked_div(rows).unwrap_or(0),
        }
    }

    pub fn len(&self) -> usize {
        self.specials() + self.patches()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn specials(&self) -> usize {
        self.camera + self.register
    }

    pub fn patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn kind(&self, index: usize) -> TokenKind {
        if index < self.camera {
            TokenKind::Camera
        } else if index < self.specials() {
            TokenKind::Register
        } else {
            TokenKind::Patch
        }
    }

    pub fn grid_pos(&self, index: usize) -> Option<GridPos> {
        let p = index.checked_sub(self.specials())?;
        (p < self.patches()).then(|| GridPos {
            row: (p / self.grid_cols) as u32,
            col: (p % self.grid_cols) as u32,
        })
    }

    /// Frame index of the patch at `(row, col)`.
    pub fn patch_index(&self, row: usize, col: usize) -> usize {
        self.specials() + row * self.grid_cols + col
    }
}
