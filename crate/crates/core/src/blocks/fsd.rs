use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{TokenSequence, TokenTag};
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::tensor::{Result, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsdConfig {
    /// Masking probability for ego-status tokens.
    pub state_rate: f64,
    /// Masking probability for fused perception tokens.
    pub fusion_rate: f64,
}

impl Default for FsdConfig {
    fn default() -> Self {
        Self { state_rate: 0.5, fusion_rate: 0.1 }
    }
}

impl FsdConfig {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, r) in [("state_rate", self.state_rate), ("fusion_rate", self.fusion_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(crate::Error::Config(format!("{name} = {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, tag: TokenTag) -> f64 {
        match tag {
            TokenTag::Fusion => self.fusion_rate,
            TokenTag::Ego => self.state_rate,
        }
    }
}

/// Independent per-token mask draw; `true` means the token is replaced.
pub fn sample_fsd_mask(tags: &[TokenTag], cfg: &FsdConfig, seed: Seed) -> Vec<bool> {
    let mut rng = seed.rng();
    tags.iter().map(|&t| rng.bernoulli(cfg.rate(t))).collect()
}

/// Feature-state dropout: add a learned positional embedding, and in
/// training replace tokens by a learned mask vector at per-tag rates. The
/// positional embedding is also added on top of the mask vector.
#[derive(Debug, Clone)]
pub struct FeatureStateDropout {
    cfg: FsdConfig,
    len: usize,
    dim: usize,
    pos_emb: ParamId,
    mask_vec: ParamId,
}

impl FeatureStateDropout {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        len: usize,
        dim: usize,
        cfg: FsdConfig,
        seed: Seed,
    ) -> crate::Result<Self> {
        cfg.validate()?;
        let pos_emb = store.add(format!("{prefix}.pos_emb"), Tensor::randn(&[len, dim], 0.02, seed.derive("pos")));
        let mask_vec = store.add(format!("{prefix}.mask_vec"), Tensor::randn(&[dim], 0.02, seed.derive("mask")));
        Ok(Self { cfg, len, dim, pos_emb, mask_vec })
    }

    pub fn config(&self) -> &FsdConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: FsdConfig) -> crate::Result<()> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn pos_emb(&self) -> ParamId {
        self.pos_emb
    }

    pub fn mask_vec(&self) -> ParamId {
        self.mask_vec
    }

    pub fn forward(&self, g: &Graph, tokens: &TokenSequence, training: bool, seed: Seed) -> Result<TokenSequence> {
        let s = tokens.value.shape();
        if s != [self.len, self.dim] {
            return Err(TensorError::Invalid {
                op: "feature_state_dropout",
                msg: format!("tokens {s:?}, expected [{}, {}]", self.len, self.dim),
            });
        }
        let mask = if training { sample_fsd_mask(&tokens.tags, &self.cfg, seed) } else { vec![false; self.len] };
        let content = if mask.iter().any(|&m| m) {
            replace_rows(&tokens.value, &g.param(self.mask_vec), mask)?
        } else {
            tokens.value.clone()
        };
        TokenSequence::new(content.add(&g.param(self.pos_emb))?, tokens.tags.clone())
    }
}

/// Rows with `mask[t]` set are replaced by `fill`; gradients route to
/// whichever source each row came from.
fn replace_rows(x: &Var, fill: &Var, mask: Vec<bool>) -> Result<Var> {
    let (xv, fv) = (x.value(), fill.value());
    let dim = fv.len();
    let mut out = xv.data().to_vec();
    for (row, &m) in out.chunks_exact_mut(dim).zip(&mask) {
        if m {
            row.copy_from_slice(fv.data());
        }
    }
    let value = Rc::new(Tensor::new(xv.shape().to_vec(), out)?);
    x.tape().custom(
        &[x, fill],
        value,
        Box::new(move |g, _| {
            let mut gx = g.to_vec();
            let mut gf = vec![0.0; dim];
            for (row, &m) in gx.chunks_exact_mut(dim).zip(&mask) {
                if m {
                    gf.iter_mut().zip(row.iter()).for_each(|(a, b)| *a += b);
                    row.fill(0.0);
                }
            }
            vec![Some(gx), Some(gf)]
        }),
    )
}
