//! Layers of the planner: multi-scale convolution, modality fusion,
//! feature-state dropout, attention and the Mamba-Transformer decoder layer.

mod attention;
mod decoder;
mod fsd;
mod fusion;
mod msc;

pub use attention::{attention_core, MultiHeadAttention, SelfAttentionBlock};
pub use decoder::{MtDecoderLayer, MtDecoderLayerConfig};
pub use fsd::{sample_fsd_mask, FeatureStateDropout, FsdConfig};
pub use fusion::{fuse, mamba_fusion, transformer_fusion_baseline, SequenceMixer};
pub use msc::{MultiScaleConv, MSC_KERNELS};

use serde::{Deserialize, Serialize};

use crate::params::{xavier_uniform, Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::ssd::MambaBlock;
use crate::tensor::{Result, Tensor, TensorError, Var};

pub const NORM_EPS: f64 = 1e-5;

/// `x·W + b` on `T×in` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, seed: Seed) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, seed));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self { weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Result<Var> {
        let y = x.matmul(&g.param(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(&g.param(b)),
            None => Ok(y),
        }
    }
}

/// Row-wise layer norm with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Result<Var> {
        x.layer_norm_rows(NORM_EPS)?.mul_row(&g.param(self.gamma))?.add_row(&g.param(self.beta))
    }
}

/// Position-wise two-layer MLP with SiLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, out: usize, seed: Seed) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, seed.derive("up")),
            down: Linear::new(store, &format!("{name}.down"), hidden, out, true, seed.derive("down")),
        }
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Result<Var> {
        self.down.forward(g, &self.up.forward(g, x)?.silu())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Camera,
    Lidar,
}

/// `C×H×W` feature map with its modality.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub value: Var,
    pub modality: Modality,
}

impl FeatureMap {
    pub fn new(value: Var, modality: Modality) -> Result<Self> {
        let s = value.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(TensorError::Invalid {
                op: "feature_map",
                msg: format!("expected non-empty C×H×W, got {s:?}"),
            });
        }
        Ok(Self { value, modality })
    }

    pub fn channels(&self) -> usize {
        self.value.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.value.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.value.shape()[2]
    }

    pub fn token_count(&self) -> usize {
        self.height() * self.width()
    }

    /// Row-major pixels as `HW×C` tokens.
    pub fn tokens(&self) -> Result<Var> {
        self.value.reshape(&[self.channels(), self.token_count()])?.transpose()
    }

    /// Inverse of [`FeatureMap::tokens`] for a map of this map's shape.
    pub fn from_tokens_like(&self, tokens: &Var) -> Result<Var> {
        tokens.transpose()?.reshape(&[self.channels(), self.height(), self.width()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTag {
    Fusion,
    Ego,
}

/// `T×D` tokens with a per-token origin tag.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub value: Var,
    pub tags: Vec<TokenTag>,
}

impl TokenSequence {
    pub fn new(value: Var, tags: Vec<TokenTag>) -> Result<Self> {
        let s = value.shape();
        if s.len() != 2 || s[0] != tags.len() {
            return Err(TensorError::Invalid {
                op: "token_sequence",
                msg: format!("{} tags for tokens of shape {s:?}", tags.len()),
            });
        }
        Ok(Self { value, tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn concat(parts: &[&TokenSequence]) -> Result<Self> {
        let vars: Vec<&Var> = parts.iter().map(|p| &p.value).collect();
        let value = Var::concat(&vars, 0)?;
        let tags = parts.iter().flat_map(|p| p.tags.iter().copied()).collect();
        Self::new(value, tags)
    }
}

impl SequenceMixer for MambaBlock {
    fn mix(&self, g: &Graph, x: &Var) -> Result<Var> {
        self.branch(g, x)
    }
}
