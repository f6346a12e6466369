use super::{LayerNorm, Linear, SequenceMixer};
use crate::params::{Graph, ParamStore};
use crate::rng::Seed;
use crate::tensor::kernels::gemm;
use crate::tensor::{Result, Tensor, TensorError, Var};

/// Multi-head scaled dot-product attention with learned Q/K/V/output maps.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    heads: usize,
    dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, seed: Seed) -> crate::Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(crate::Error::Config(format!("attention dim {dim} not divisible by {heads} heads")));
        }
        let lin = |store: &mut ParamStore, name: &str| {
            Linear::new(store, &format!("{prefix}.{name}"), dim, dim, false, seed.derive(name))
        };
        Ok(Self {
            heads,
            dim,
            query: lin(store, "query"),
            key: lin(store, "key"),
            value: lin(store, "value"),
            output: lin(store, "output"),
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn check(&self, q: &Var, kv: &Var) -> Result<()> {
        for (what, v) in [("query", q), ("memory", kv)] {
            let s = v.shape();
            if s.len() != 2 || s[1] != self.dim || s[0] == 0 {
                return Err(TensorError::Invalid {
                    op: "attention",
                    msg: format!("{what} shape {s:?}, expected [T, {}]", self.dim),
                });
            }
        }
        Ok(())
    }

    /// Per-head attention probabilities (`Tq×Tk` logits after softmax).
    fn head_probs(&self, g: &Graph, q: &Var, kv: &Var) -> Result<(Vec<Var>, Var)> {
        self.check(q, kv)?;
        let dk = self.dim / self.heads;
        let qp = self.query.forward(g, q)?.scale(1.0 / (dk as f64).sqrt());
        let kp = self.key.forward(g, kv)?;
        let vp = self.value.forward(g, kv)?;
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = qp.slice(1, h * dk, dk)?;
            let kh = kp.slice(1, h * dk, dk)?;
            probs.push(qh.matmul(&kh.transpose()?)?.softmax_rows()?);
        }
        Ok((probs, vp))
    }

    pub fn weights(&self, g: &Graph, q: &Var, kv: &Var) -> Result<Vec<Tensor>> {
        let (probs, _) = self.head_probs(g, q, kv)?;
        Ok(probs.iter().map(|p| (*p.value()).clone()).collect())
    }

    pub fn forward(&self, g: &Graph, q: &Var, kv: &Var) -> Result<Var> {
        let (probs, vp) = self.head_probs(g, q, kv)?;
        let dk = self.dim / self.heads;
        let heads =
            probs.iter().enumerate().map(|(h, p)| p.matmul(&vp.slice(1, h * dk, dk)?)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Var> = heads.iter().collect();
        self.output.forward(g, &Var::concat(&refs, 1)?)
    }
}

/// Pre-norm self-attention branch used by the attention fusion baseline.
#[derive(Debug, Clone)]
pub struct SelfAttentionBlock {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
}

impl SelfAttentionBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, seed: Seed) -> crate::Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), dim),
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), dim, heads, seed)?,
        })
    }
}

impl SequenceMixer for SelfAttentionBlock {
    fn mix(&self, g: &Graph, x: &Var) -> Result<Var> {
        let u = self.norm.forward(g, x)?;
        self.attn.forward(g, &u, &u)
    }
}

/// Single-head core `softmax(q kᵀ) v` on projected rows (`q: Tq×D`,
/// `k, v: Tk×D`), with normalization deferred to the `Tq×D` output.
/// Multiplies are recorded on the thread counter; exponentials and the final
/// divisions are not multiplies and are not counted.
pub fn attention_core(len_q: usize, len_k: usize, dim: usize, q: &[f64], k: &[f64], v: &[f64]) -> Vec<f64> {
    let mut scores = vec![0.0; len_q * len_k];
    gemm(len_q, dim, len_k, q, false, k, true, &mut scores, false);
    let mut sums = vec![0.0; len_q];
    for (row, sum) in scores.chunks_exact_mut(len_k).zip(&mut sums) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            *sum += *s;
        }
    }
    let mut out = vec![0.0; len_q * dim];
    gemm(len_q, len_k, dim, &scores, false, v, false, &mut out, false);
    for (row, sum) in out.chunks_exact_mut(dim).zip(&sums) {
        row.iter_mut().for_each(|o| *o /= sum);
    }
    out
}
