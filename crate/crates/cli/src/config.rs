//! TOML run configuration.
//!
//! ```toml
//! [model]        # raster dims, widths, decoder sizes, ssd_mode, position_scale, seed
//! [model.fsd]    # state_rate, fusion_rate
//! [train]        # batch_size, max_steps, lr, weight_decay, heading_weight, target_ade, seed
//! [scoring]      # substeps, ttc_horizon, ttc_step, accel_max, jerk_max, progress_speed, min_achievable
//! [paths]        # data, out, report (command-line flags take precedence)
//! ```
//!
//! Every table and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use drama::model::{ModelConfig, TrainConfig};
use drama::pdms::ScoringConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid run config: {e}")))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.scoring.validate()?;
        Ok(())
    }
}

/// Print the fully resolved configuration so every default is on record.
pub fn announce(what: &str, cfg: &impl Serialize) {
    match toml::to_string(cfg) {
        Ok(text) => eprintln!("# resolved {what} configuration\n{text}"),
        Err(e) => eprintln!("# resolved {what} configuration unavailable: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg =
            RunConfig::from_toml("[train]\nlr = 0.001\n[model.fsd]\nstate_rate = 0.0\nfusion_rate = 0.0\n").unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model.fsd.state_rate, 0.0);
    }
}
