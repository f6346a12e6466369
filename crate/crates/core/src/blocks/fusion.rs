use super::{FeatureMap, SelfAttentionBlock};
use crate::params::Graph;
use crate::ssd::MambaBlock;
use crate::tensor::{Result, TensorError, Var};

/// A token mixer used as the residual branch of a fusion stage.
pub trait SequenceMixer {
    fn mix(&self, g: &Graph, x: &Var) -> Result<Var>;
}

/// Flatten both maps to tokens, concatenate (camera first), mix, split at
/// the camera/lidar boundary, reshape and add back to the inputs.
pub fn fuse(
    mixer: &dyn SequenceMixer,
    g: &Graph,
    cam: &FeatureMap,
    lidar: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    if cam.channels() != lidar.channels() {
        return Err(TensorError::Invalid {
            op: "fusion",
            msg: format!("camera has {} channels, lidar {}", cam.channels(), lidar.channels()),
        });
    }
    let (nc, nl) = (cam.token_count(), lidar.token_count());
    let seq = Var::concat(&[&cam.tokens()?, &lidar.tokens()?], 0)?;
    let mixed = mixer.mix(g, &seq)?;
    let parts = mixed.split(&[nc, nl], 0)?;
    let cam_out = cam.value.add(&cam.from_tokens_like(&parts[0])?)?;
    let lidar_out = lidar.value.add(&lidar.from_tokens_like(&parts[1])?)?;
    Ok((FeatureMap::new(cam_out, cam.modality)?, FeatureMap::new(lidar_out, lidar.modality)?))
}

pub fn mamba_fusion(
    block: &MambaBlock,
    g: &Graph,
    cam: &FeatureMap,
    lidar: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    fuse(block, g, cam, lidar)
}

pub fn transformer_fusion_baseline(
    block: &SelfAttentionBlock,
    g: &Graph,
    cam: &FeatureMap,
    lidar: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    fuse(block, g, cam, lidar)
}
