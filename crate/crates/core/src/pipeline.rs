//! Glue between the generator, the model and the scorer.

use std::fs;
use std::path::Path;

use crate::model::{DramaModel, TrainSample, Trajectory};
use crate::pdms::{score_all, PdmsReport, ScoringConfig};
use crate::synth::ScenarioSample;
use crate::{Error, Result};

pub fn train_samples(samples: &[ScenarioSample]) -> Vec<TrainSample> {
    samples.iter().map(|s| TrainSample { input: s.input(), target: s.gt }).collect()
}

/// Score `plans[i]` in place of the logged plan of `samples[i]`.
pub fn score_plans(samples: &[ScenarioSample], plans: &[Trajectory], cfg: &ScoringConfig) -> Result<PdmsReport> {
    if samples.len() != plans.len() {
        return Err(Error::Config(format!("{} plans for {} scenarios", plans.len(), samples.len())));
    }
    let logs: Vec<_> = samples.iter().zip(plans).map(|(s, p)| s.log.with_plan(*p)).collect();
    score_all(&logs, cfg)
}

/// Eval-mode inference on every scenario, then scoring.
pub fn evaluate_model(model: &DramaModel, samples: &[ScenarioSample], cfg: &ScoringConfig) -> Result<PdmsReport> {
    let inputs: Vec<_> = samples.iter().map(ScenarioSample::input).collect();
    let plans = model.infer_batch(&inputs)?;
    score_plans(samples, &plans, cfg)
}

/// Score the ground-truth trajectories as if they were predictions.
pub fn evaluate_ground_truth(samples: &[ScenarioSample], cfg: &ScoringConfig) -> Result<PdmsReport> {
    let plans: Vec<_> = samples.iter().map(|s| s.gt).collect();
    score_plans(samples, &plans, cfg)
}

pub fn write_report(path: &Path, report: &PdmsReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let text = serde_json::to_string_pretty(report).map_err(Error::json(path))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}
