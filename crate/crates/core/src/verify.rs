//! Self-check suites: three-way SSD equivalence over random instances and
//! finite-difference gradient checks over every block.

use serde::Serialize;

use crate::blocks::{
    mamba_fusion, FeatureMap, FeatureStateDropout, FsdConfig, Modality, MtDecoderLayer, MtDecoderLayerConfig,
    MultiHeadAttention, MultiScaleConv, TokenSequence, TokenTag,
};
use crate::model::{DramaModel, EgoStatus, ModelConfig, ModelInput};
use crate::params::{check_param_grads, ParamStore};
use crate::rng::Seed;
use crate::ssd::{
    ssd_linear_chunked, ssd_linear_chunked_faulty, ssd_quadratic, ssm_recurrence_reference, MambaBlock,
    MambaBlockConfig, SsdMode, SsdParams,
};
use crate::tensor::gradcheck::relative_error;
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

pub const EQUIV_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-5;
pub const MAX_STATE_DIM: usize = 8;
pub const MAX_HEADS: usize = 4;
pub const MAX_HEAD_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivTrial {
    pub index: usize,
    pub len: usize,
    pub state_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub chunk: usize,
    /// Quadratic form against the recurrence.
    pub err_quadratic: f64,
    /// Chunked form against the recurrence.
    pub err_chunked: f64,
}

impl EquivTrial {
    pub fn worst(&self) -> f64 {
        self.err_quadratic.max(self.err_chunked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivReport {
    pub trials: usize,
    pub worst: f64,
    pub worst_trial: Option<EquivTrial>,
    pub failures: Vec<EquivTrial>,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivConfig {
    pub trials: usize,
    pub max_len: usize,
    pub tol: f64,
    pub seed: Seed,
    /// Use the chunked path with a dropped state carry.
    pub inject_fault: bool,
}

impl Default for EquivConfig {
    fn default() -> Self {
        Self { trials: 1000, max_len: 64, tol: EQUIV_TOL, seed: Seed(0), inject_fault: false }
    }
}

/// Run `cfg.trials` random instances with `T ≤ max_len`, `N ≤ 8`, `H ≤ 4`,
/// `P ≤ 4` and `Q` drawn from `{1, 2, 3, 8, 16, T}`.
pub fn equivalence_suite(cfg: &EquivConfig) -> Result<EquivReport> {
    if cfg.trials == 0 || cfg.max_len == 0 {
        return Err(Error::Config("equivalence suite needs at least one trial and max length ≥ 1".into()));
    }
    let mut report = EquivReport { trials: cfg.trials, worst: 0.0, worst_trial: None, failures: Vec::new() };
    for index in 0..cfg.trials {
        let seed = cfg.seed.split(index as u64);
        let mut rng = seed.derive("shape").rng();
        let len = 1 + rng.index(cfg.max_len);
        let state_dim = 1 + rng.index(MAX_STATE_DIM);
        let heads = 1 + rng.index(MAX_HEADS);
        let head_dim = 1 + rng.index(MAX_HEAD_DIM);
        let chunk = [1, 2, 3, 8, 16, len][rng.index(6)];
        let params = SsdParams::random(len, heads, state_dim, seed.derive("params"));
        let x = Tensor::randn(&[len, heads * head_dim], 1.0, seed.derive("x"));
        let reference = ssm_recurrence_reference(&params, &x)?;
        let quadratic = ssd_quadratic(&params, &x)?;
        let chunked = if cfg.inject_fault {
            ssd_linear_chunked_faulty(&params, &x, chunk)?
        } else {
            ssd_linear_chunked(&params, &x, chunk)?
        };
        let trial = EquivTrial {
            index,
            len,
            state_dim,
            heads,
            head_dim,
            chunk,
            err_quadratic: relative_error(quadratic.data(), reference.data()),
            err_chunked: relative_error(chunked.data(), reference.data()),
        };
        if !(trial.worst() <= cfg.tol) {
            report.failures.push(trial.clone());
        }
        if report.worst_trial.is_none() || !(trial.worst() <= report.worst) {
            report.worst = trial.worst();
            report.worst_trial = Some(trial);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub block: String,
    /// Worst relative error over all checked parameters.
    pub worst: f64,
    /// Name of the parameter attaining the worst error.
    pub worst_param: String,
    pub params: usize,
}

impl GradCheckRow {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

fn summarize(block: &str, checks: Vec<crate::params::ParamCheck>) -> GradCheckRow {
    let params = checks.len();
    let worst = checks.into_iter().fold((0.0, String::new()), |acc, c| {
        if c.rel_err > acc.0 || c.rel_err.is_nan() {
            (c.rel_err, c.name)
        } else {
            acc
        }
    });
    GradCheckRow { block: block.into(), worst: worst.0, worst_param: worst.1, params }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteConfig {
    pub seed: Seed,
    /// Coordinates probed per parameter tensor of the single blocks.
    pub max_coords: usize,
    /// Model used for the end-to-end check.
    pub model: ModelConfig,
    /// Coordinates probed per parameter tensor of the full model.
    pub model_coords: usize,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self { seed: Seed(0), max_coords: 16, model: ModelConfig::default(), model_coords: 3 }
    }
}

/// Finite-difference checks over every block plus an eval-mode forward pass
/// of the whole model.
pub fn gradient_suite(suite: &GradSuiteConfig) -> Result<Vec<GradCheckRow>> {
    let (seed, max_coords) = (suite.seed, suite.max_coords);
    let mut rows = Vec::new();
    let s = |name: &str| seed.derive(name);

    {
        let mut store = ParamStore::new();
        let cfg = MambaBlockConfig { mode: SsdMode::Chunked(3), ..MambaBlockConfig::new(8, 2, 3) };
        let block = MambaBlock::new(&mut store, "mamba", cfg, s("mamba.init"))?;
        let x = store.add("input", Tensor::randn(&[7, 8], 1.0, s("mamba.x")));
        let checks = check_param_grads(&store, |g| block.forward(g, &g.param(x)), s("mamba.check"), max_coords)?;
        rows.push(summarize("mamba_block", checks));
    }
    {
        let mut store = ParamStore::new();
        let block = MambaBlock::new(&mut store, "fusion", MambaBlockConfig::new(4, 1, 4), s("fusion.init"))?;
        let ci = store.add("camera", Tensor::randn(&[4, 3, 5], 1.0, s("fusion.cam")));
        let li = store.add("lidar", Tensor::randn(&[4, 2, 2], 1.0, s("fusion.lidar")));
        let checks = check_param_grads(
            &store,
            |g| {
                let (c, l) = mamba_fusion(
                    &block,
                    g,
                    &FeatureMap::new(g.param(ci), Modality::Camera)?,
                    &FeatureMap::new(g.param(li), Modality::Lidar)?,
                )?;
                Var::concat(&[&c.value.reshape(&[60])?, &l.value.reshape(&[16])?], 0)
            },
            s("fusion.check"),
            max_coords,
        )?;
        rows.push(summarize("mamba_fusion", checks));
    }
    {
        let mut store = ParamStore::new();
        let msc = MultiScaleConv::new(&mut store, "msc", 2, 3, s("msc.init"));
        let x = store.add("input", Tensor::randn(&[2, 5, 6], 1.0, s("msc.x")));
        let checks = check_param_grads(
            &store,
            |g| Ok(msc.forward(g, &FeatureMap::new(g.param(x), Modality::Camera)?)?.value),
            s("msc.check"),
            max_coords,
        )?;
        rows.push(summarize("msc", checks));
    }
    {
        let mut store = ParamStore::new();
        let cfg = FsdConfig { state_rate: 0.0, fusion_rate: 0.0 };
        let fsd = FeatureStateDropout::new(&mut store, "fsd", 9, 4, cfg, s("fsd.init"))?;
        let x = store.add("input", Tensor::randn(&[9, 4], 1.0, s("fsd.x")));
        let mut tags = vec![TokenTag::Fusion; 6];
        tags.extend([TokenTag::Ego; 3]);
        let checks = check_param_grads(
            &store,
            |g| Ok(fsd.forward(g, &TokenSequence::new(g.param(x), tags.clone())?, true, s("fsd.mask"))?.value),
            s("fsd.check"),
            max_coords,
        )?;
        rows.push(summarize("fsd", checks));
    }
    {
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "attn", 6, 2, s("attn.init"))?;
        let q = store.add("query", Tensor::randn(&[2, 6], 1.0, s("attn.q")));
        let kv = store.add("memory", Tensor::randn(&[5, 6], 1.0, s("attn.kv")));
        let checks =
            check_param_grads(&store, |g| mha.forward(g, &g.param(q), &g.param(kv)), s("attn.check"), max_coords)?;
        rows.push(summarize("cross_attention", checks));
    }
    {
        let mut store = ParamStore::new();
        let cfg = MtDecoderLayerConfig {
            mamba_heads: 2,
            state_dim: 4,
            attn_heads: 2,
            ffn_hidden: 12,
            mode: SsdMode::Chunked(2),
            ..MtDecoderLayerConfig::new(8)
        };
        let layer = MtDecoderLayer::new(&mut store, "mt", cfg, s("mt.init"))?;
        let q = store.add("query", Tensor::randn(&[5, 8], 1.0, s("mt.q")));
        let m = store.add("memory", Tensor::randn(&[7, 8], 1.0, s("mt.mem")));
        let checks =
            check_param_grads(&store, |g| layer.forward(g, &g.param(q), &g.param(m)), s("mt.check"), max_coords)?;
        rows.push(summarize("mt_layer", checks));
    }
    {
        let cfg = &suite.model;
        let model = DramaModel::new(cfg.clone())?;
        let mut rng = s("model.input").rng();
        let input = ModelInput {
            camera: Tensor::new(cfg.image.to_vec(), rng.vec_uniform(cfg.image.iter().product(), 0.0, 1.0))?,
            bev: Tensor::new(cfg.bev.to_vec(), rng.vec_uniform(cfg.bev.iter().product(), 0.0, 1.0))?,
            ego: EgoStatus::from_slice(&[3.0, 0.2, 0.5, -0.1, 0.0, 1.0, 0.0, 0.0])?,
        };
        let checks = check_param_grads(
            model.params(),
            |g| model.forward_graph(g, &input, false, s("model.fsd")),
            s("model.check"),
            suite.model_coords,
        )?;
        rows.push(summarize("full_forward", checks));
    }
    Ok(rows)
}
