use super::{FeatureMap, FeedForward};
use crate::params::{xavier_uniform, Graph, ParamId, ParamStore};
use crate::rng::Seed;
use crate::tensor::{Result, Tensor, TensorError, Var};

pub const MSC_KERNELS: [usize; 3] = [5, 7, 9];

/// Parallel same-padded 5/7/9 convolutions, summed, followed by a residual
/// per-position MLP.
#[derive(Debug, Clone)]
pub struct MultiScaleConv {
    in_channels: usize,
    branches: Vec<(ParamId, ParamId)>,
    mlp: FeedForward,
}

impl MultiScaleConv {
    pub fn new(store: &mut ParamStore, prefix: &str, in_channels: usize, out_channels: usize, seed: Seed) -> Self {
        let branches = MSC_KERNELS
            .iter()
            .map(|&k| {
                let fan_in = in_channels * k * k;
                let fan_out = out_channels * k * k;
                let kernel = store.add(
                    format!("{prefix}.conv{k}.kernel"),
                    xavier_uniform(
                        &[out_channels, in_channels, k, k],
                        fan_in,
                        fan_out,
                        seed.derive(&format!("conv{k}")),
                    ),
                );
                let bias = store.add(format!("{prefix}.conv{k}.bias"), Tensor::zeros(&[out_channels]));
                (kernel, bias)
            })
            .collect();
        let mlp = FeedForward::new(
            store,
            &format!("{prefix}.mlp"),
            out_channels,
            2 * out_channels,
            out_channels,
            seed.derive("mlp"),
        );
        Self { in_channels, branches, mlp }
    }

    /// `(kernel, bias)` per branch in kernel-size order.
    pub fn branches(&self) -> &[(ParamId, ParamId)] {
        &self.branches
    }

    pub fn mlp(&self) -> &FeedForward {
        &self.mlp
    }

    pub fn forward(&self, g: &Graph, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.in_channels {
            return Err(TensorError::Invalid {
                op: "multi_scale_conv",
                msg: format!("input has {} channels, expected {}", x.channels(), self.in_channels),
            });
        }
        let mut sum: Option<Var> = None;
        for &(k, b) in &self.branches {
            let y = x.value.conv2d_same(&g.param(k), &g.param(b))?;
            sum = Some(match sum {
                Some(s) => s.add(&y)?,
                None => y,
            });
        }
        let summed = FeatureMap::new(sum.expect("three branches"), x.modality)?;
        let tokens = summed.tokens()?;
        let refined = tokens.add(&self.mlp.forward(g, &tokens)?)?;
        FeatureMap::new(summed.from_tokens_like(&refined)?, x.modality)
    }
}
