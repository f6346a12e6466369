use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{DramaModel, ModelInput, Trajectory, WAYPOINTS};
use crate::params::{Graph, ParamStore};
use crate::rng::Seed;
use crate::tensor::{self, Tensor, Var};
use crate::{Error, Result};

/// Mean absolute error over x, y and the wrapped heading difference.
pub fn imitation_loss(pred: &Var, target: &Trajectory, heading_weight: f64) -> tensor::Result<Var> {
    let g = pred.tape();
    let parts = pred.split(&[2, 1], 1)?;
    let gt = target.to_tensor();
    let gt_xy =
        g.constant(Tensor::new(vec![WAYPOINTS, 2], gt.data().chunks_exact(3).flat_map(|r| [r[0], r[1]]).collect())?);
    let gt_h = g.constant(Tensor::new(vec![WAYPOINTS, 1], gt.data().chunks_exact(3).map(|r| r[2]).collect())?);
    let xy = parts[0].sub(&gt_xy)?.abs().sum();
    let h = parts[1].sub(&gt_h)?.wrap_angle().abs().sum().scale(heading_weight);
    Ok(xy.add(&h)?.scale(1.0 / (3 * WAYPOINTS) as f64))
}

/// AdamW with decoupled weight decay; moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, first: zeros(), second: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Restore optimizer state; lengths must match the store layout.
    pub fn restore(&mut self, steps: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        let ok =
            |m: &[Vec<f64>]| m.len() == self.first.len() && m.iter().zip(&self.first).all(|(a, b)| a.len() == b.len());
        if !ok(&first) || !ok(&second) {
            return Err(Error::Config("optimizer moments do not match the parameter layout".into()));
        }
        self.steps = steps;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One update. Missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let w = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let grad = grads.get(k).and_then(Option::as_ref);
            for i in 0..w.len() {
                let gi = grad.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                w[i] -= self.lr * (update + self.weight_decay * w[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: ModelInput,
    pub target: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total step budget, counted from step 0 (a resumed run stops here too).
    pub max_steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub heading_weight: f64,
    /// Stop once eval-mode ADE on the training set falls below this (metres).
    pub target_ade: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_steps: 2000,
            lr: 1e-4,
            weight_decay: 0.01,
            heading_weight: 1.0,
            target_ade: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.heading_weight >= 0.0) {
            return Err(Error::Config("lr, weight_decay and heading_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One CSV row, written at the end of every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Mean ADE of the epoch's training-mode predictions.
    pub ade: f64,
    pub wall_ms: u64,
}

impl LogRow {
    pub const VERSION: u32 = 1;
    pub const HEADER: &'static str = "step,epoch,loss,ade,wall_ms";

    /// Leading lines of a log file: version comment then column header.
    pub fn preamble() -> String {
        format!("# drama-train-log version {}\n{}\n", Self::VERSION, Self::HEADER)
    }

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.epoch, self.loss, self.ade, self.wall_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Step counter after the run.
    pub step: u64,
    pub steps_run: u64,
    pub final_loss: f64,
    /// Eval-mode ADE over the training set after the last step.
    pub train_ade: f64,
    pub reached_target: bool,
    pub log: Vec<LogRow>,
}

/// Eval-mode mean ADE of `model` over `data`.
pub fn dataset_ade(model: &DramaModel, data: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        total += model.forward(&s.input, false, Seed(0))?.ade(&s.target);
    }
    Ok(total / data.len() as f64)
}

fn epoch_order(len: usize, seed: Seed, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    seed.derive("shuffle").split(epoch).rng().shuffle(&mut order);
    order
}

/// Minibatch AdamW on the imitation loss, continuing from `start_step`.
///
/// Batches are a pure function of `(seed, step)`: epoch `e` is a seeded
/// permutation cut into consecutive batches, so a resumed run replays exactly
/// the batches an uninterrupted run would have seen.
pub fn train(
    model: &mut DramaModel,
    opt: &mut AdamW,
    data: &[TrainSample],
    cfg: &TrainConfig,
    start_step: u64,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for s in data {
        model.check_input(&s.input)?;
    }
    let seed = Seed(cfg.seed);
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let clock = Instant::now();
    let mut log = Vec::new();
    let (mut epoch_loss, mut epoch_ade, mut epoch_steps, mut epoch_samples) = (0.0, 0.0, 0u64, 0usize);
    let mut step = start_step;
    let mut final_loss = f64::NAN;
    let mut reached_target = false;
    while step < cfg.max_steps {
        let epoch = step / batches_per_epoch;
        let within = (step % batches_per_epoch) as usize;
        let order = epoch_order(data.len(), seed, epoch);
        let batch = &order[within * cfg.batch_size..((within + 1) * cfg.batch_size).min(data.len())];

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.params().len()];
        let mut batch_loss = 0.0;
        let weight = 1.0 / batch.len() as f64;
        for (slot, &i) in batch.iter().enumerate() {
            let sample = &data[i];
            let g = Graph::new(model.params(), true);
            let fsd_seed = seed.derive("fsd").split(step).split(slot as u64);
            let pred = model.forward_graph(&g, &sample.input, true, fsd_seed)?;
            let loss = imitation_loss(&pred, &sample.target, cfg.heading_weight)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            loss.backward()?;
            batch_loss += value * weight;
            epoch_ade += Trajectory::from_tensor(&pred.value())?.ade(&sample.target);
            for (acc, gi) in grads.iter_mut().zip(g.grads()) {
                if let Some(gi) = gi {
                    let acc = acc.get_or_insert_with(|| vec![0.0; gi.len()]);
                    acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += weight * b);
                }
            }
        }
        opt.step(model.params_mut(), &grads);
        step += 1;
        final_loss = batch_loss;
        epoch_loss += batch_loss;
        epoch_steps += 1;
        epoch_samples += batch.len();

        let epoch_done = step.is_multiple_of(batches_per_epoch) || step == cfg.max_steps;
        if epoch_done {
            let row = LogRow {
                step,
                epoch,
                loss: epoch_loss / epoch_steps as f64,
                ade: epoch_ade / epoch_samples as f64,
                wall_ms: clock.elapsed().as_millis() as u64,
            };
            on_row(&row);
            log.push(row);
            (epoch_loss, epoch_ade, epoch_steps, epoch_samples) = (0.0, 0.0, 0, 0);
            if let Some(target) = cfg.target_ade {
                // The training-mode ADE is a cheap pre-filter; the stop decision uses eval mode.
                if log.last().is_some_and(|r| r.ade < 2.0 * target) && dataset_ade(model, data)? < target {
                    reached_target = true;
                    break;
                }
            }
        }
    }
    let train_ade = dataset_ade(model, data)?;
    Ok(TrainOutcome {
        step,
        steps_run: step - start_step,
        final_loss,
        train_ade,
        reached_target: reached_target || cfg.target_ade.is_some_and(|t| train_ade < t),
        log,
    })
}
