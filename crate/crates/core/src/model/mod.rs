//! The planner: dual CNN encoders with interleaved fusion stages, feature-state
//! dropout over BEV and ego tokens, and a Mamba-Transformer decoder that turns
//! a learnable query into an 8-waypoint trajectory.

mod checkpoint;
mod net;
mod train;
mod types;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{DramaModel, EncoderOutput, ModelInput};
pub use train::{dataset_ade, imitation_loss, train, AdamW, LogRow, TrainConfig, TrainOutcome, TrainSample};
pub use types::{Command, EgoStatus, Trajectory, Waypoint, HORIZON, WAYPOINTS, WAYPOINT_DT};

use serde::{Deserialize, Serialize};

use crate::blocks::FsdConfig;
use crate::ssd::SsdMode;
use crate::{Error, Result};

pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Camera raster `[C, H, W]`.
    pub image: [usize; 3],
    /// LiDAR BEV raster `[C, H, W]`.
    pub bev: [usize; 3],
    pub d_model: usize,
    /// Output channels of the multi-scale convolution stem.
    pub stem_channels: usize,
    /// Channels after each of the four stride-2 stages.
    pub stage_channels: [usize; STAGES],
    pub fusion_head_dim: usize,
    pub fusion_state_dim: usize,
    pub mt_layers: usize,
    pub query_tokens: usize,
    pub decoder_mamba_heads: usize,
    pub decoder_state_dim: usize,
    pub decoder_attn_heads: usize,
    pub decoder_ffn_hidden: usize,
    pub head_hidden: usize,
    /// Width of the causal conv inside every Mamba block; 0 disables it.
    pub conv_width: usize,
    pub ssd_mode: SsdMode,
    /// Metres per unit of raw head output for x and y.
    pub position_scale: f64,
    pub fsd: FsdConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image: [3, 64, 256],
            bev: [1, 64, 64],
            d_model: 64,
            stem_channels: 4,
            stage_channels: [8, 16, 32, 64],
            fusion_head_dim: 8,
            fusion_state_dim: 8,
            mt_layers: 3,
            query_tokens: 1,
            decoder_mamba_heads: 4,
            decoder_state_dim: 16,
            decoder_attn_heads: 4,
            decoder_ffn_hidden: 128,
            head_hidden: 64,
            conv_width: 4,
            ssd_mode: SsdMode::Chunked(16),
            position_scale: 10.0,
            fsd: FsdConfig::default(),
            seed: 0,
        }
    }
}

fn halve(n: usize) -> usize {
    crate::tensor::conv2d_out_dim(n, 3, 2)
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image.iter().chain(&self.bev).any(|&d| d == 0) {
            return bad(format!("raster dims must be positive: image {:?}, bev {:?}", self.image, self.bev));
        }
        if self.stem_channels == 0 || self.d_model == 0 || self.head_hidden == 0 {
            return bad("stem_channels, d_model and head_hidden must be positive".into());
        }
        for &c in &self.stage_channels {
            if self.fusion_head_dim == 0 || c == 0 || c % self.fusion_head_dim != 0 {
                return bad(format!("stage channels {c} not divisible by fusion_head_dim {}", self.fusion_head_dim));
            }
        }
        if self.fusion_state_dim == 0 || self.decoder_state_dim == 0 {
            return bad("state dims must be positive".into());
        }
        if self.mt_layers == 0 || self.query_tokens == 0 {
            return bad("mt_layers and query_tokens must be positive".into());
        }
        if self.decoder_mamba_heads == 0 || !self.d_model.is_multiple_of(self.decoder_mamba_heads) {
            return bad(format!(
                "d_model {} not divisible by {} decoder Mamba heads",
                self.d_model, self.decoder_mamba_heads
            ));
        }
        if self.decoder_attn_heads == 0 || !self.d_model.is_multiple_of(self.decoder_attn_heads) {
            return bad(format!(
                "d_model {} not divisible by {} attention heads",
                self.d_model, self.decoder_attn_heads
            ));
        }
        if let SsdMode::Chunked(0) = self.ssd_mode {
            return bad("ssd chunk must be at least 1".into());
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return bad(format!("position_scale must be positive, got {}", self.position_scale));
        }
        self.fsd.validate()
    }

    /// `(H, W)` of the camera and BEV maps after each stage.
    pub fn stage_dims(&self) -> [((usize, usize), (usize, usize)); STAGES] {
        let mut cam = (self.image[1], self.image[2]);
        let mut bev = (self.bev[1], self.bev[2]);
        std::array::from_fn(|_| {
            cam = (halve(cam.0), halve(cam.1));
            bev = (halve(bev.0), halve(bev.1));
            (cam, bev)
        })
    }

    pub fn bev_tokens(&self) -> usize {
        let (h, w) = self.stage_dims()[STAGES - 1].1;
        h * w
    }

    /// BEV tokens plus the three ego tokens.
    pub fn memory_tokens(&self) -> usize {
        self.bev_tokens() + 3
    }
}
