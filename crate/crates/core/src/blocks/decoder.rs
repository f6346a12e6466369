use serde::{Deserialize, Serialize};

use super::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::ssd::{MambaBlock, MambaBlockConfig, SsdMode};
use crate::tensor::{Result, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtDecoderLayerConfig {
    pub d_model: usize,
    pub mamba_heads: usize,
    pub state_dim: usize,
    pub attn_heads: usize,
    /// Hidden width of the feed-forward sub-block; 0 drops the sub-block.
    pub ffn_hidden: usize,
    pub conv_width: usize,
    pub mode: SsdMode,
}

impl MtDecoderLayerConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            mamba_heads: (d_model / 16).max(1),
            state_dim: 16,
            attn_heads: 4,
            ffn_hidden: 2 * d_model,
            conv_width: 4,
            mode: SsdMode::default(),
        }
    }
}

/// Query self-mixing by a Mamba block, cross-attention to memory, then a
/// feed-forward sub-block; each pre-normalized with a residual connection.
#[derive(Debug, Clone)]
pub struct MtDecoderLayer {
    pub mamba: MambaBlock,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: Option<LayerNorm>,
    pub ffn: Option<FeedForward>,
}

impl MtDecoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: MtDecoderLayerConfig, seed: Seed) -> crate::Result<Self> {
        let d = cfg.d_model;
        let mcfg = MambaBlockConfig {
            conv_width: cfg.conv_width,
            mode: cfg.mode,
            ..MambaBlockConfig::new(d, cfg.mamba_heads, cfg.state_dim)
        };
        let mamba = MambaBlock::new(store, &format!("{prefix}.mamba"), mcfg, seed.derive("mamba"))?;
        let attn_norm = LayerNorm::new(store, &format!("{prefix}.attn_norm"), d);
        let attn =
            MultiHeadAttention::new(store, &format!("{prefix}.cross_attn"), d, cfg.attn_heads, seed.derive("attn"))?;
        let (ffn_norm, ffn) = if cfg.ffn_hidden > 0 {
            (
                Some(LayerNorm::new(store, &format!("{prefix}.ffn_norm"), d)),
                Some(FeedForward::new(store, &format!("{prefix}.ffn"), d, cfg.ffn_hidden, d, seed.derive("ffn"))),
            )
        } else {
            (None, None)
        };
        Ok(Self { mamba, attn_norm, attn, ffn_norm, ffn })
    }

    /// Final projections of every residual branch (zeroing them all makes the
    /// layer the identity on its query).
    pub fn residual_output_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.mamba.out_proj(), self.attn.output.weight()];
        if let Some(ffn) = &self.ffn {
            ids.push(ffn.down.weight());
            ids.extend(ffn.down.bias());
        }
        ids
    }

    pub fn forward(&self, g: &Graph, query: &Var, memory: &Var) -> Result<Var> {
        let x = self.mamba.forward(g, query)?;
        let x = x.add(&self.attn.forward(g, &self.attn_norm.forward(g, &x)?, memory)?)?;
        match (&self.ffn_norm, &self.ffn) {
            (Some(norm), Some(ffn)) => x.add(&ffn.forward(g, &norm.forward(g, &x)?)?),
            _ => Ok(x),
        }
    }
}
