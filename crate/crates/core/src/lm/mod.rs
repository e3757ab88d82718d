//! Decoder-only transformer: pre-norm blocks with RMSNorm, rotary position
//! encoding, causal multi-head attention and a SwiGLU feed-forward, an
//! untied output head, no biases. Forward and exact backward passes are
//! hand-written over a flat parameter buffer.

mod cache;
mod model;
mod params;
pub mod real;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::KvCache;
pub use model::{forward, loss, loss_and_grads, sequence_nll};
pub use params::{LayerOffsets, Layout, Params, TensorSpec};
pub use real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds max_context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("parameter buffer does not match the config layout: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward hidden width as a multiple of `dim`.
    pub ffn_multiplier: usize,
    pub max_context: usize,
    pub rope_base: f64,
    pub norm_epsilon: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 322,
            dim: 256,
            n_layers: 6,
            n_heads: 8,
            ffn_multiplier: 4,
            max_context: 1024,
            rope_base: 10000.0,
            norm_epsilon: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: String| Err(LmError::Config(m));
        if self.vocab_size == 0 || self.dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("vocab_size, dim, n_layers and n_heads must be positive".into());
        }
        if self.dim % self.n_heads != 0 {
            return bad(format!(
                "dim {} is not divisible by n_heads {}",
                self.dim, self.n_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return bad(format!("head dim {} must be even for rotary encoding", self.head_dim()));
        }
        if self.ffn_multiplier == 0 || self.max_context == 0 {
            return bad("ffn_multiplier and max_context must be positive".into());
        }
        if !(self.rope_base > 1.0) || !(self.norm_epsilon > 0.0) {
            return bad("rope_base must exceed 1 and norm_epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.ffn_multiplier
    }

    /// V·d + L·(4d² + 3·d·f + 2d) + d + d·V.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.dim, self.hidden(), self.n_layers);
        v * d + l * (4 * d * d + 3 * d * f + 2 * d) + d + d * v
    }

    pub fn hash(&self) -> String {
        crate::util::digest_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}
