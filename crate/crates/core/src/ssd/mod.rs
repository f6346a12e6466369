//! Mamba-2 selective state-space layer.
//!
//! Decay is a scalar per head, so `abar_t = exp(Δ_t·a)` and the input term is
//! `Δ_t·B_t·x_t`. The same map is computed three ways: a sequential scan, the
//! masked quadratic form `(C Bᵀ ⊙ L) x`, and a chunked scan that runs the
//! quadratic form inside each chunk and carries a state between chunks.

mod block;
pub mod kernels;
mod op;

pub use block::{MambaBlock, MambaBlockConfig};
pub use op::ssd_scan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Seed;
use crate::tensor::{Tensor, TensorError};
use kernels::Head;

/// Largest sequence for which the dense transfer matrix may be built.
pub const MAX_MATERIALIZE_LEN: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SsdError {
    #[error("step size must be positive, got {value} at index {index}")]
    NonPositiveDelta { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds the materialization limit {max}")]
    TooLong { len: usize, max: usize },
    #[error("head {head} out of range for {heads} heads")]
    Head { head: usize, heads: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SsdError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsdMode {
    Recurrence,
    Quadratic,
    Chunked(usize),
}

impl Default for SsdMode {
    fn default() -> Self {
        SsdMode::Chunked(16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsdConfig {
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    pub chunk: usize,
}

impl SsdConfig {
    pub fn new(d_model: usize, heads: usize, state_dim: usize) -> Result<Self> {
        let cfg = Self { d_model, heads, head_dim: d_model / heads.max(1), state_dim, chunk: 16 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.head_dim == 0 || self.state_dim == 0 || self.chunk == 0 {
            return Err(SsdError::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.heads * self.head_dim != self.d_model {
            return Err(SsdError::Config(format!(
                "heads·head_dim = {}·{} != d_model {}",
                self.heads, self.head_dim, self.d_model
            )));
        }
        Ok(())
    }
}

/// `(abar, input scale)` for one step: `exp(Δ·a)` and `Δ`.
pub fn discretize(a: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(SsdError::NonPositiveDelta { index: 0, value: delta });
    }
    Ok(((delta * a).exp(), delta))
}

/// Per-sequence SSD inputs: decay per head, step sizes `T×H`, and the shared
/// selective projections `B`, `C` (`T×N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SsdParams {
    a: Vec<f64>,
    delta: Tensor,
    b: Tensor,
    c: Tensor,
}

impl SsdParams {
    pub fn new(a: Vec<f64>, delta: Tensor, b: Tensor, c: Tensor) -> Result<Self> {
        let heads = a.len();
        if heads == 0 || delta.rank() != 2 || delta.shape()[1] != heads {
            return Err(SsdError::Config(format!("delta shape {:?} does not match {heads} heads", delta.shape())));
        }
        let len = delta.shape()[0];
        if b.rank() != 2 || b.shape() != c.shape() || b.shape()[0] != len || b.shape()[1] == 0 {
            return Err(SsdError::Config(format!("B {:?} and C {:?} must both be {len}×N", b.shape(), c.shape())));
        }
        if let Some((index, &value)) = delta.data().iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(SsdError::NonPositiveDelta { index, value });
        }
        Ok(Self { a, delta, b, c })
    }

    /// Random instance with `a ∈ [−2, −0.05]` and `Δ ∈ [0.01, 1]`.
    pub fn random(len: usize, heads: usize, state_dim: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let a = (0..heads).map(|_| -rng.uniform(0.05, 2.0)).collect();
        let delta = Tensor::new(vec![len, heads], rng.vec_uniform(len * heads, 0.01, 1.0)).expect("shape");
        let b = Tensor::new(vec![len, state_dim], rng.vec_normal(len * state_dim, 1.0)).expect("shape");
        let c = Tensor::new(vec![len, state_dim], rng.vec_normal(len * state_dim, 1.0)).expect("shape");
        Self { a, delta, b, c }
    }

    pub fn len(&self) -> usize {
        self.delta.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn heads(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.b.shape()[1]
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn c(&self) -> &Tensor {
        &self.c
    }

    fn head_dt(&self, head: usize) -> Vec<f64> {
        let h = self.heads();
        (0..self.len()).map(|t| self.delta.data()[t * h + head]).collect()
    }

    fn head_dim_for(&self, x: &Tensor) -> Result<usize> {
        let h = self.heads();
        if x.rank() != 2 || x.shape()[0] != self.len() || !x.shape()[1].is_multiple_of(h) || x.shape()[1] == 0 {
            return Err(SsdError::Config(format!(
                "x shape {:?} incompatible with length {} and {h} heads",
                x.shape(),
                self.len()
            )));
        }
        Ok(x.shape()[1] / h)
    }
}

pub(crate) fn gather_head(x: &[f64], len: usize, width: usize, head: usize, head_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * head_dim);
    for t in 0..len {
        out.extend_from_slice(&x[t * width + head * head_dim..t * width + (head + 1) * head_dim]);
    }
    out
}

pub(crate) fn scatter_head(dst: &mut [f64], src: &[f64], len: usize, width: usize, head: usize, head_dim: usize) {
    for t in 0..len {
        dst[t * width + head * head_dim..t * width + (head + 1) * head_dim]
            .copy_from_slice(&src[t * head_dim..(t + 1) * head_dim]);
    }
}

fn run_heads(params: &SsdParams, x: &Tensor, kernel: impl Fn(&Head) -> Vec<f64>) -> Result<Tensor> {
    let p = params.head_dim_for(x)?;
    let (len, width) = (params.len(), x.shape()[1]);
    let mut y = vec![0.0; len * width];
    for head in 0..params.heads() {
        let xh = gather_head(x.data(), len, width, head, p);
        let dt = params.head_dt(head);
        let h = Head {
            len,
            head_dim: p,
            state_dim: params.state_dim(),
            x: &xh,
            dt: &dt,
            a: params.a[head],
            b: params.b.data(),
            c: params.c.data(),
        };
        scatter_head(&mut y, &kernel(&h), len, width, head, p);
    }
    Ok(Tensor::new(vec![len, width], y)?)
}

/// Sequential left-to-right scan from `h_0 = 0`.
pub fn ssm_recurrence_reference(params: &SsdParams, x: &Tensor) -> Result<Tensor> {
    run_heads(params, x, kernels::recurrence_forward)
}

pub fn ssd_quadratic(params: &SsdParams, x: &Tensor) -> Result<Tensor> {
    run_heads(params, x, kernels::quadratic_forward)
}

pub fn ssd_linear_chunked(params: &SsdParams, x: &Tensor, chunk: usize) -> Result<Tensor> {
    if chunk == 0 {
        return Err(SsdError::Config("chunk size must be at least 1".into()));
    }
    run_heads(params, x, |h| kernels::chunked_forward(h, chunk))
}

/// Chunked scan with the state carry dropped at the second chunk boundary.
#[doc(hidden)]
pub fn ssd_linear_chunked_faulty(params: &SsdParams, x: &Tensor, chunk: usize) -> Result<Tensor> {
    if chunk == 0 {
        return Err(SsdError::Config("chunk size must be at least 1".into()));
    }
    run_heads(params, x, |h| kernels::chunked_states(h, chunk, Some(1)).0)
}

pub fn ssd_forward(params: &SsdParams, x: &Tensor, mode: SsdMode) -> Result<Tensor> {
    match mode {
        SsdMode::Recurrence => ssm_recurrence_reference(params, x),
        SsdMode::Quadratic => ssd_quadratic(params, x),
        SsdMode::Chunked(q) => ssd_linear_chunked(params, x, q),
    }
}

/// Dense lower-triangular `T×T` matrix of one head, `M_ji = C_j·B_i·∏abar·Δ_i`.
pub fn materialize_m(params: &SsdParams, head: usize) -> Result<Tensor> {
    if params.len() > MAX_MATERIALIZE_LEN {
        return Err(SsdError::TooLong { len: params.len(), max: MAX_MATERIALIZE_LEN });
    }
    if head >= params.heads() {
        return Err(SsdError::Head { head, heads: params.heads() });
    }
    let dt = params.head_dt(head);
    let h = Head {
        len: params.len(),
        head_dim: 0,
        state_dim: params.state_dim(),
        x: &[],
        dt: &dt,
        a: params.a[head],
        b: params.b.data(),
        c: params.c.data(),
    };
    Ok(Tensor::new(vec![params.len(); 2], kernels::transfer_matrix(&h))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    Attention,
    Ssd,
}

/// Leading-order forward multiply count: `T²·D` for attention, `T·D²` for SSD.
pub fn flop_proxy(model: CostModel, len: u64, dim: u64) -> u64 {
    match model {
        CostModel::Attention => len * len * dim,
        CostModel::Ssd => len * dim * dim,
    }
}
