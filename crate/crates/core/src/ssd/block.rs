use serde::{Deserialize, Serialize};

use super::{ssd_scan, SsdConfig, SsdError, SsdMode};
use crate::params::{xavier_uniform, Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::tensor::{Result, Tensor, TensorError, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaBlockConfig {
    pub d_model: usize,
    pub heads: usize,
    pub state_dim: usize,
    /// Width of the causal depthwise conv on the x-branch; 0 disables it.
    pub conv_width: usize,
    pub mode: SsdMode,
}

impl MambaBlockConfig {
    pub fn new(d_model: usize, heads: usize, state_dim: usize) -> Self {
        Self { d_model, heads, state_dim, conv_width: 4, mode: SsdMode::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> std::result::Result<(), SsdError> {
        let chunk = match self.mode {
            SsdMode::Chunked(q) => q,
            _ => 1,
        };
        SsdConfig {
            d_model: self.d_model,
            heads: self.heads,
            head_dim: self.head_dim(),
            state_dim: self.state_dim,
            chunk,
        }
        .validate()
    }

    fn proj_width(&self) -> usize {
        2 * self.d_model + 2 * self.state_dim + self.heads
    }
}

/// Pre-norm residual Mamba-2 block.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    cfg: MambaBlockConfig,
    norm_gamma: ParamId,
    norm_beta: ParamId,
    in_proj: ParamId,
    conv: Option<(ParamId, ParamId)>,
    a_log: ParamId,
    dt_bias: ParamId,
    out_proj: ParamId,
}

impl MambaBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: MambaBlockConfig,
        seed: Seed,
    ) -> std::result::Result<Self, SsdError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let name = |s: &str| format!("{prefix}.{s}");
        let norm_gamma = store.add(name("norm.gamma"), Tensor::full(&[d], 1.0));
        let norm_beta = store.add(name("norm.beta"), Tensor::zeros(&[d]));
        let w = cfg.proj_width();
        let in_proj = store.add(name("in_proj"), xavier_uniform(&[d, w], d, w, seed.derive("in_proj")));
        let conv = (cfg.conv_width > 0).then(|| {
            let k = cfg.conv_width;
            let bound = 1.0 / (k as f64).sqrt();
            let kernel = store.add(name("conv.kernel"), Tensor::uniform(&[d, k], -bound, bound, seed.derive("conv")));
            let bias = store.add(name("conv.bias"), Tensor::zeros(&[d]));
            (kernel, bias)
        });
        let mut rng = seed.derive("ssm").rng();
        let a_init: Vec<f64> = (0..cfg.heads).map(|_| rng.uniform(0.5f64.ln(), 2f64.ln())).collect();
        let dt_init: Vec<f64> = (0..cfg.heads)
            .map(|_| {
                let dt = rng.uniform(0.001f64.ln(), 0.1f64.ln()).exp();
                dt.exp_m1().ln()
            })
            .collect();
        let a_log = store.add(name("a_log"), Tensor::new(vec![cfg.heads], a_init).expect("shape"));
        let dt_bias = store.add(name("dt_bias"), Tensor::new(vec![cfg.heads], dt_init).expect("shape"));
        let out_proj = store.add(name("out_proj"), xavier_uniform(&[d, d], d, d, seed.derive("out_proj")));
        Ok(Self { cfg, norm_gamma, norm_beta, in_proj, conv, a_log, dt_bias, out_proj })
    }

    pub fn config(&self) -> &MambaBlockConfig {
        &self.cfg
    }

    pub fn out_proj(&self) -> ParamId {
        self.out_proj
    }

    /// Residual branch only (without the skip connection).
    pub fn branch(&self, g: &Graph, x: &Var) -> Result<Var> {
        let cfg = &self.cfg;
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != cfg.d_model {
            return Err(TensorError::Invalid {
                op: "mamba_block",
                msg: format!("input {shape:?}, expected [T, {}]", cfg.d_model),
            });
        }
        let u = x.layer_norm_rows(NORM_EPS)?.mul_row(&g.param(self.norm_gamma))?.add_row(&g.param(self.norm_beta))?;
        let proj = u.matmul(&g.param(self.in_proj))?;
        let (d, n, h) = (cfg.d_model, cfg.state_dim, cfg.heads);
        let parts = proj.split(&[d, d, n, n, h], 1)?;
        let [xb, z, b, c, dt_raw] = <[Var; 5]>::try_from(parts).expect("five parts");
        let xb = match self.conv {
            Some((k, bias)) => xb.causal_depthwise_conv1d(&g.param(k), &g.param(bias))?,
            None => xb,
        }
        .silu();
        let dt = dt_raw.add_row(&g.param(self.dt_bias))?.softplus();
        let a = g.param(self.a_log).exp().neg();
        let y = ssd_scan(&xb, &dt, &a, &b, &c, cfg.mode)?;
        y.mul(&z.silu())?.matmul(&g.param(self.out_proj))
    }

    pub fn forward(&self, g: &Graph, x: &Var) -> Result<Var> {
        x.add(&self.branch(g, x)?)
    }
}
