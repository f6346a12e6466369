use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, DramaModel, ModelConfig};
use crate::tensor::container::{self, TensorSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "drama-checkpoint";
const CONFIG_FILE: &str = "config.json";
const TENSORS_FILE: &str = "tensors.json";
const FIRST_MOMENT: &str = "adam.first.";
const SECOND_MOMENT: &str = "adam.second.";

/// Model weights plus everything needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DramaModel,
    pub optimizer: AdamW,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Seed of the training run that produced the weights.
    pub train_seed: u64,
}

impl Checkpoint {
    /// Fresh, untrained checkpoint.
    pub fn new(cfg: ModelConfig, lr: f64, weight_decay: f64, train_seed: u64) -> Result<Self> {
        let model = DramaModel::new(cfg)?;
        let optimizer = AdamW::new(model.params(), lr, weight_decay);
        Ok(Self { model, optimizer, step: 0, train_seed })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    version: u32,
    step: u64,
    train_seed: u64,
    optimizer: OptimizerMeta,
    model: ModelConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
}

/// Write `ckpt` into directory `dir` (created if missing): `config.json`
/// plus a tensor container holding weights and optimizer moments.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let store = ckpt.model.params();
    let mut set = store.to_set();
    let (first, second) = ckpt.optimizer.moments();
    for (prefix, moments) in [(FIRST_MOMENT, first), (SECOND_MOMENT, second)] {
        for (id, m) in store.ids().zip(moments) {
            let t = Tensor::new(store.get(id).shape().to_vec(), m.clone())?;
            set.push(format!("{prefix}{}", store.name(id)), t);
        }
    }
    container::write(&dir.join(TENSORS_FILE), &set)?;
    let opt = &ckpt.optimizer;
    let sidecar = Sidecar {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        step: ckpt.step,
        train_seed: ckpt.train_seed,
        optimizer: OptimizerMeta {
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            steps: opt.steps(),
        },
        model: ckpt.model.config().clone(),
    };
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(&sidecar).map_err(Error::json(&path))?;
    fs::write(&path, text).map_err(Error::io(&path))
}

/// Load a checkpoint directory. Either everything loads or an error is
/// returned; no partially initialized model escapes.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(Error::json(&path))?;
    if sidecar.format != FORMAT || sidecar.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported checkpoint {} version {} (expected {FORMAT} version {CHECKPOINT_VERSION})",
            path.display(),
            sidecar.format,
            sidecar.version
        )));
    }
    let set = container::read(&dir.join(TENSORS_FILE))?;
    let mut model = DramaModel::new(sidecar.model)?;
    let n = model.params().len();
    if set.tensors.len() != 3 * n {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, expected {} (weights and two moment sets)",
            set.tensors.len(),
            3 * n
        )));
    }
    let mut parts = set.tensors.chunks_exact(n);
    let weights = TensorSet { tensors: parts.next().expect("three chunks").to_vec() };
    let mut moments = Vec::with_capacity(2);
    for (prefix, chunk) in [FIRST_MOMENT, SECOND_MOMENT].into_iter().zip(parts) {
        let mut m = Vec::with_capacity(n);
        for ((name, t), id) in chunk.iter().zip(model.params().ids()) {
            let own = model.params().get(id);
            if name.strip_prefix(prefix) != Some(model.params().name(id)) || t.shape() != own.shape() {
                return Err(Error::Config(format!(
                    "optimizer entry {name} does not match parameter {}",
                    model.params().name(id)
                )));
            }
            m.push(t.data().to_vec());
        }
        moments.push(m);
    }
    model.load_params(&weights)?;
    let o = &sidecar.optimizer;
    let mut optimizer = AdamW::new(model.params(), o.lr, o.weight_decay);
    optimizer.beta1 = o.beta1;
    optimizer.beta2 = o.beta2;
    optimizer.eps = o.eps;
    let second = moments.pop().expect("two moment sets");
    let first = moments.pop().expect("two moment sets");
    optimizer.restore(o.steps, first, second)?;
    Ok(Checkpoint { model, optimizer, step: sidecar.step, train_seed: sidecar.train_seed })
}
