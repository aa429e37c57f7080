//! Flat TOML run configuration.
//!
//! Every key is optional except `version`; unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! variant = "deari+dml"
//! layers = 3
//! hidden = 108
//! epochs = 100
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::FreezeSchedule;
use crate::brits::CellType;
use crate::error::{Error, Result};
use crate::metric::{DmlConfig, MsParams, PositiveSign, Strategy};
use crate::model::{ModelConfig, Variant};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub cell: CellType,
    pub encoder_depth: usize,
    pub heads: usize,
    /// Encoder feed-forward width; `4 * hidden` when absent.
    pub ffn: Option<usize>,
    pub consistency_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    pub folds: usize,
    pub unfreeze_every: u64,
    pub unfreeze_window: u64,
    pub prior_std: f64,
    pub rho_init: f64,
    pub n_sim: usize,
    pub dml_strategy: Strategy,
    pub dml_margin: f64,
    pub dml_alpha: f64,
    pub dml_beta: f64,
    pub dml_epsilon: f64,
    pub dml_sign: PositiveSign,
    pub dml_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ms = MsParams::default();
        let dml = DmlConfig::default();
        let schedule = FreezeSchedule::default();
        RunConfig {
            version: CONFIG_VERSION,
            variant: Variant {
                deep: true,
                dml: false,
                bayesian: false,
            },
            layers: 3,
            hidden: 108,
            cell: CellType::Gru,
            encoder_depth: 2,
            heads: 4,
            ffn: None,
            consistency_weight: 0.1,
            batch_size: 64,
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            patience: 10,
            seed: 0,
            folds: 5,
            unfreeze_every: schedule.every,
            unfreeze_window: schedule.window,
            prior_std: 1.0,
            rho_init: crate::bayes::DEFAULT_RHO,
            n_sim: 10,
            dml_strategy: dml.strategy,
            dml_margin: dml.margin,
            dml_alpha: ms.alpha,
            dml_beta: ms.beta,
            dml_epsilon: ms.epsilon,
            dml_sign: ms.sign,
            dml_weight: dml.weight,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Effective layer count: single-layer variants ignore `layers`.
    pub fn effective_layers(&self) -> usize {
        if self.variant.deep {
            self.layers
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if self.n_sim == 0 {
            return Err(Error::Config("n_sim must be at least 1".into()));
        }
        if self.dml_alpha <= 0.0 || self.dml_beta <= 0.0 {
            return Err(Error::Config("dml_alpha and dml_beta must be positive".into()));
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, features: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.variant, features, self.hidden, self.effective_layers());
        m.cell = self.cell;
        m.encoder_depth = self.encoder_depth;
        m.heads = self.heads;
        m.ffn = self.ffn.unwrap_or(4 * self.hidden);
        m.consistency_weight = self.consistency_weight;
        m.prior_std = self.prior_std;
        m.rho_init = self.rho_init;
        m.schedule = FreezeSchedule {
            every: self.unfreeze_every,
            window: self.unfreeze_window,
        };
        m.dml = DmlConfig {
            strategy: self.dml_strategy,
            margin: self.dml_margin,
            weight: self.dml_weight,
            ms: MsParams {
                alpha: self.dml_alpha,
                beta: self.dml_beta,
                epsilon: self.dml_epsilon,
                sign: self.dml_sign,
            },
        };
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml("version = 1\nvariant = \"brits\"\n").unwrap();
        assert_eq!(cfg.hidden, 108);
        assert_eq!(cfg.effective_layers(), 1);
        assert_eq!(cfg.model_config(35).ffn, 432);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_toml("version = 1\nhiden = 3\n").unwrap_err();
        assert!(err.to_string().contains("hiden"));
    }

    #[test]
    fn version_is_checked() {
        assert!(RunConfig::from_toml("version = 2\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            variant: "bayesian-deari+dml".parse().unwrap(),
            ffn: Some(64),
            dml_sign: PositiveSign::Printed,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
