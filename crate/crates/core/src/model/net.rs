use super::{EgoStatus, ModelConfig, Trajectory, STAGES, WAYPOINTS};
use crate::blocks::{
    fuse, FeatureMap, FeatureStateDropout, FeedForward, LayerNorm, Linear, Modality, MtDecoderLayer,
    MtDecoderLayerConfig, MultiScaleConv, TokenSequence, TokenTag,
};
use crate::params::{xavier_uniform, Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::ssd::{MambaBlock, MambaBlockConfig};
use crate::tensor::{self, Tensor, Var};
use crate::{Error, Result};

/// One scenario's sensor rasters and ego status.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub camera: Tensor,
    pub bev: Tensor,
    pub ego: EgoStatus,
}

#[derive(Debug, Clone)]
struct DownConv {
    kernel: ParamId,
    bias: ParamId,
}

impl DownConv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, seed: Seed) -> Self {
        let kernel = store.add(format!("{name}.kernel"), xavier_uniform(&[cout, cin, 3, 3], cin * 9, cout * 9, seed));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { kernel, bias }
    }

    /// Stride-2 conv → whole-map normalization → SiLU.
    fn forward(&self, g: &Graph, x: &FeatureMap) -> tensor::Result<FeatureMap> {
        let y = x.value.conv2d(&g.param(self.kernel), &g.param(self.bias), 2)?;
        let shape = y.shape();
        let n: usize = shape.iter().product();
        let y = y.reshape(&[1, n])?.layer_norm_rows(crate::blocks::NORM_EPS)?.reshape(&shape)?.silu();
        FeatureMap::new(y, x.modality)
    }
}

#[derive(Debug, Clone)]
struct EncoderStage {
    cam_down: DownConv,
    lidar_down: DownConv,
    fusion: MambaBlock,
}

/// Final encoder maps.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub camera: FeatureMap,
    pub lidar: FeatureMap,
    /// Shapes `[C, H, W]` of the camera and lidar maps after each stage.
    pub stage_shapes: Vec<([usize; 3], [usize; 3])>,
}

#[derive(Debug, Clone)]
struct Layers {
    cam_msc: MultiScaleConv,
    lidar_msc: MultiScaleConv,
    stages: Vec<EncoderStage>,
    bev_proj: Linear,
    ego_velocity: FeedForward,
    ego_acceleration: FeedForward,
    ego_command: FeedForward,
    fsd: FeatureStateDropout,
    query: ParamId,
    decoder: Vec<MtDecoderLayer>,
    head_norm: LayerNorm,
    head: FeedForward,
}

/// The planner with its weights.
#[derive(Debug, Clone)]
pub struct DramaModel {
    cfg: ModelConfig,
    params: ParamStore,
    layers: Layers,
}

impl DramaModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = Seed(cfg.seed);
        let mut p = ParamStore::new();
        let d = cfg.d_model;
        let cam_msc =
            MultiScaleConv::new(&mut p, "encoder.camera.msc", cfg.image[0], cfg.stem_channels, seed.derive("cam_msc"));
        let lidar_msc =
            MultiScaleConv::new(&mut p, "encoder.lidar.msc", cfg.bev[0], cfg.stem_channels, seed.derive("lidar_msc"));
        let mut stages = Vec::with_capacity(STAGES);
        let mut cin = cfg.stem_channels;
        for (i, &cout) in cfg.stage_channels.iter().enumerate() {
            let s = seed.derive("stage").split(i as u64);
            let prefix = format!("encoder.stage{i}");
            let mcfg = MambaBlockConfig {
                conv_width: cfg.conv_width,
                mode: cfg.ssd_mode,
                ..MambaBlockConfig::new(cout, cout / cfg.fusion_head_dim, cfg.fusion_state_dim)
            };
            stages.push(EncoderStage {
                cam_down: DownConv::new(&mut p, &format!("{prefix}.camera.down"), cin, cout, s.derive("cam")),
                lidar_down: DownConv::new(&mut p, &format!("{prefix}.lidar.down"), cin, cout, s.derive("lidar")),
                fusion: MambaBlock::new(&mut p, &format!("{prefix}.fusion"), mcfg, s.derive("fusion"))?,
            });
            cin = cout;
        }
        let bev_proj = Linear::new(&mut p, "encoder.bev_proj", cin, d, true, seed.derive("bev_proj"));
        let ego = |p: &mut ParamStore, name: &str, n_in: usize| {
            FeedForward::new(p, &format!("encoder.ego.{name}"), n_in, d, d, seed.derive(name))
        };
        let ego_velocity = ego(&mut p, "velocity", 2);
        let ego_acceleration = ego(&mut p, "acceleration", 2);
        let ego_command = ego(&mut p, "command", 4);
        let fsd = FeatureStateDropout::new(&mut p, "fsd", cfg.memory_tokens(), d, cfg.fsd, seed.derive("fsd"))?;
        let query = p.add("decoder.query", Tensor::randn(&[cfg.query_tokens, d], 1.0, seed.derive("query")));
        let dcfg = MtDecoderLayerConfig {
            d_model: d,
            mamba_heads: cfg.decoder_mamba_heads,
            state_dim: cfg.decoder_state_dim,
            attn_heads: cfg.decoder_attn_heads,
            ffn_hidden: cfg.decoder_ffn_hidden,
            conv_width: cfg.conv_width,
            mode: cfg.ssd_mode,
        };
        let decoder = (0..cfg.mt_layers)
            .map(|i| {
                MtDecoderLayer::new(&mut p, &format!("decoder.layer{i}"), dcfg, seed.derive("decoder").split(i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let head_norm = LayerNorm::new(&mut p, "head.norm", d);
        let head = FeedForward::new(&mut p, "head.mlp", d, cfg.head_hidden, WAYPOINTS * 3, seed.derive("head"));
        let layers = Layers {
            cam_msc,
            lidar_msc,
            stages,
            bev_proj,
            ego_velocity,
            ego_acceleration,
            ego_command,
            fsd,
            query,
            decoder,
            head_norm,
            head,
        };
        Ok(Self { cfg, params: p, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Output projections of every fusion Mamba block.
    pub fn fusion_out_projs(&self) -> Vec<ParamId> {
        self.layers.stages.iter().map(|s| s.fusion.out_proj()).collect()
    }

    pub fn decoder_layers(&self) -> &[MtDecoderLayer] {
        &self.layers.decoder
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.camera.shape() != self.cfg.image || input.bev.shape() != self.cfg.bev {
            return Err(Error::Config(format!(
                "input rasters camera {:?} / bev {:?} do not match model {:?} / {:?}",
                input.camera.shape(),
                input.bev.shape(),
                self.cfg.image,
                self.cfg.bev
            )));
        }
        Ok(())
    }

    /// Encoder only. With `fusion` off each stage is conv-norm-SiLU per stream.
    pub fn encode(&self, g: &Graph, camera: &Var, bev: &Var, fusion: bool) -> tensor::Result<EncoderOutput> {
        let l = &self.layers;
        let mut cam = l.cam_msc.forward(g, &FeatureMap::new(camera.clone(), Modality::Camera)?)?;
        let mut lidar = l.lidar_msc.forward(g, &FeatureMap::new(bev.clone(), Modality::Lidar)?)?;
        let mut stage_shapes = Vec::with_capacity(STAGES);
        for stage in &l.stages {
            cam = stage.cam_down.forward(g, &cam)?;
            lidar = stage.lidar_down.forward(g, &lidar)?;
            if fusion {
                (cam, lidar) = fuse(&stage.fusion, g, &cam, &lidar)?;
            }
            let shape = |m: &FeatureMap| [m.channels(), m.height(), m.width()];
            stage_shapes.push((shape(&cam), shape(&lidar)));
        }
        Ok(EncoderOutput { camera: cam, lidar, stage_shapes })
    }

    fn ego_tokens(&self, g: &Graph, ego: &EgoStatus) -> tensor::Result<Var> {
        let l = &self.layers;
        let row = |v: &[f64]| g.input(Tensor::new(vec![1, v.len()], v.to_vec()).expect("finite ego status"));
        let vel = l.ego_velocity.forward(g, &row(&ego.velocity))?;
        let acc = l.ego_acceleration.forward(g, &row(&ego.acceleration))?;
        let cmd = l.ego_command.forward(g, &row(&ego.command.one_hot()))?;
        Var::concat(&[&vel, &acc, &cmd], 0)
    }

    /// Full forward pass producing the `8×3` waypoint tensor (heading wrapped).
    pub fn forward_graph(&self, g: &Graph, input: &ModelInput, training: bool, seed: Seed) -> tensor::Result<Var> {
        let l = &self.layers;
        let enc = self.encode(g, &g.input(input.camera.clone()), &g.input(input.bev.clone()), true)?;
        let bev = l.bev_proj.forward(g, &enc.lidar.tokens()?)?;
        let ego = self.ego_tokens(g, &input.ego)?;
        let mut tags = vec![TokenTag::Fusion; bev.shape()[0]];
        tags.extend([TokenTag::Ego; 3]);
        let tokens = TokenSequence::new(Var::concat(&[&bev, &ego], 0)?, tags)?;
        let memory = l.fsd.forward(g, &tokens, training, seed)?.value;
        let mut q = g.param(l.query);
        for layer in &l.decoder {
            q = layer.forward(g, &q, &memory)?;
        }
        let last = q.slice(0, self.cfg.query_tokens - 1, 1)?;
        let raw = l.head.forward(g, &l.head_norm.forward(g, &last)?)?.reshape(&[WAYPOINTS, 3])?;
        let parts = raw.split(&[2, 1], 1)?;
        let xy = parts[0].scale(self.cfg.position_scale);
        let heading = parts[1].wrap_angle();
        Var::concat(&[&xy, &heading], 1)
    }

    pub fn forward(&self, input: &ModelInput, training: bool, seed: Seed) -> Result<Trajectory> {
        self.check_input(input)?;
        let g = Graph::new(&self.params, false);
        let y = self.forward_graph(&g, input, training, seed)?;
        Trajectory::from_tensor(&y.value())
    }

    /// Eval-mode forward per scenario, in order.
    pub fn infer_batch(&self, inputs: &[ModelInput]) -> Result<Vec<Trajectory>> {
        inputs.iter().map(|i| self.forward(i, false, Seed(0))).collect()
    }

    /// Replace the weights, checking names and shapes.
    pub fn load_params(&mut self, set: &tensor::container::TensorSet) -> Result<()> {
        self.params.load_set(set).map_err(Error::from)
    }

    /// Switch dropout rates (e.g. 0 for ablations).
    pub fn set_fsd(&mut self, fsd: crate::blocks::FsdConfig) -> Result<()> {
        self.layers.fsd.set_config(fsd)?;
        self.cfg.fsd = fsd;
        Ok(())
    }
}
