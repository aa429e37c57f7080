//! Model variants, configuration and the training/inference entry points
//! shared by the harness and the command line.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{init_attention_params, AttentionShape};
use crate::bayes::{convert_to_bayesian, is_bayesian, kl_term, mc_predict, FreezeSchedule, UncertaintyBand};
use crate::binder::{Binder, WeightMode};
use crate::brits::{collect_steps, CellShape, CellType};
use crate::data::SeriesBatch;
use crate::error::{Error, Result};
use crate::metric::{dml_objective, DmlConfig, TripletSet, DML_PREFIX};
use crate::stack::{init_stack_params, parameter_count, stack_forward, ParamCount, StackConfig, StackOutput};
use crate::tensor::{Array, Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub deep: bool,
    pub dml: bool,
    pub bayesian: bool,
}

impl Variant {
    pub const ALL: [&'static str; 8] = [
        "brits",
        "brits+dml",
        "deari",
        "deari+dml",
        "bayesian-brits",
        "bayesian-brits+dml",
        "bayesian-deari",
        "bayesian-deari+dml",
    ];
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (bayesian, rest) = match lower.strip_prefix("bayesian-") {
            Some(r) => (true, r),
            None => (false, lower.as_str()),
        };
        let (base, dml) = match rest.strip_suffix("+dml") {
            Some(b) => (b, true),
            None => (rest, false),
        };
        let deep = match base {
            "brits" => false,
            "deari" => true,
            _ => {
                return Err(Error::Config(format!(
                    "unknown model variant `{s}` (expected one of {})",
                    Variant::ALL.join(", ")
                )))
            }
        };
        Ok(Variant {
            deep,
            dml,
            bayesian,
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bayesian {
            f.write_str("bayesian-")?;
        }
        f.write_str(if self.deep { "deari" } else { "brits" })?;
        if self.dml {
            f.write_str("+dml")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub features: usize,
    pub hidden: usize,
    pub layers: usize,
    pub cell: CellType,
    pub encoder_depth: usize,
    pub heads: usize,
    pub ffn: usize,
    pub consistency_weight: f64,
    pub dml: DmlConfig,
    pub prior_std: f64,
    pub rho_init: f64,
    pub schedule: FreezeSchedule,
}

impl ModelConfig {
    pub fn new(variant: Variant, features: usize, hidden: usize, layers: usize) -> Self {
        ModelConfig {
            variant,
            features,
            hidden,
            layers: if variant.deep { layers } else { 1 },
            cell: CellType::Gru,
            encoder_depth: 2,
            heads: 4,
            ffn: 4 * hidden,
            consistency_weight: 0.1,
            dml: DmlConfig::default(),
            prior_std: 1.0,
            rho_init: crate::bayes::DEFAULT_RHO,
            schedule: FreezeSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.hidden == 0 {
            return Err(Error::Config("features and hidden must be positive".into()));
        }
        if !self.variant.deep && self.layers != 1 {
            return Err(Error::Config(format!(
                "variant {} is single-layer but {} layers were requested",
                self.variant, self.layers
            )));
        }
        if self.prior_std <= 0.0 {
            return Err(Error::Config("prior_std must be positive".into()));
        }
        self.stack().validate()?;
        if self.variant.dml {
            self.attention().validate()?;
        }
        if self.variant.bayesian {
            self.schedule.validate()?;
        }
        Ok(())
    }

    pub fn attention(&self) -> AttentionShape {
        AttentionShape {
            hidden: self.hidden,
            heads: self.heads,
            depth: self.encoder_depth,
            ffn: self.ffn,
        }
    }

    pub fn stack(&self) -> StackConfig {
        StackConfig {
            layers: self.layers,
            cell: CellShape {
                features: self.features,
                hidden: self.hidden,
                cell: self.cell,
            },
            attention: self.attention(),
            consistency_weight: self.consistency_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// One forward pass with its loss components.
pub struct Forward<'g> {
    pub stack: StackOutput<'g>,
    pub imputation_loss: Var<'g>,
    pub dml_loss: Option<Var<'g>>,
    pub triplets: Option<TripletSet>,
    pub kl: Option<Var<'g>>,
    pub loss: Var<'g>,
}

impl<'g> Forward<'g> {
    /// Combined imputation `[B, T, D]` in normalized units.
    pub fn imputation(&self) -> Array {
        collect_steps(self.stack.imputation())
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_stack_params(&mut params, &config.stack(), &mut rng);
        if config.variant.dml {
            init_attention_params(&mut params, DML_PREFIX, config.attention(), &mut rng);
        }
        if config.variant.bayesian {
            convert_to_bayesian(&mut params, config.rho_init);
        }
        Ok(Model { config, params })
    }

    pub fn is_bayesian(&self) -> bool {
        is_bayesian(&self.params)
    }

    /// Builds the loss graph. The divergence term is added only when the
    /// binder samples Gaussian weights.
    pub fn forward<'g>(
        &self,
        p: &Binder<'g, '_>,
        batch: &SeriesBatch,
        n_batches: usize,
    ) -> Result<Forward<'g>> {
        if batch.num_features() != self.config.features {
            return Err(Error::Data(format!(
                "model expects {} features, batch has {}",
                self.config.features,
                batch.num_features()
            )));
        }
        let stack = stack_forward(p, &self.config.stack(), batch)?;
        let imputation_loss = stack.loss;
        let mut loss = imputation_loss;
        let (mut dml_loss, mut triplets) = (None, None);
        if self.config.variant.dml {
            let out = dml_objective(p, Some(self.config.attention()), &stack.layers, &self.config.dml)?;
            loss = loss.add(out.loss.scale(self.config.dml.weight))?;
            dml_loss = Some(out.loss);
            triplets = Some(out.triplets);
        }
        let mut kl = None;
        if p.mode() == WeightMode::Open {
            kl = kl_term(&p.sampled(), self.config.prior_std, n_batches)?;
            if let Some(k) = kl {
                loss = loss.add(k)?;
            }
        }
        Ok(Forward {
            stack,
            imputation_loss,
            dml_loss,
            triplets,
            kl,
            loss,
        })
    }

    /// Deterministic imputation (Gaussian weights at their means), normalized units.
    pub fn predict(&self, batch: &SeriesBatch) -> Result<Array> {
        self.predict_with(batch, WeightMode::Frozen, 0)
    }

    pub fn predict_with(&self, batch: &SeriesBatch, mode: WeightMode, seed: u64) -> Result<Array> {
        let g = Graph::new();
        let p = Binder::with_mode(&g, &self.params, mode, seed);
        let stack = stack_forward(&p, &self.config.stack(), batch)?;
        let out = collect_steps(stack.imputation());
        if !out.is_finite() {
            return Err(Error::NonFinite("imputation".into()));
        }
        Ok(out)
    }

    /// Monte-Carlo band over `n_sim` sampled passes, normalized units.
    pub fn uncertainty(&self, batch: &SeriesBatch, n_sim: usize, seed: u64) -> Result<UncertaintyBand> {
        mc_predict(n_sim, seed, |s| self.predict_with(batch, WeightMode::Open, s))
    }

    pub fn parameter_count(&self) -> ParamCount {
        parameter_count(&self.config.stack())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for name in Variant::ALL {
            let v: Variant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert!("gru-d".parse::<Variant>().is_err());
    }

    #[test]
    fn brits_variants_are_single_layer() {
        let cfg = ModelConfig::new("brits".parse().unwrap(), 3, 8, 4);
        assert_eq!(cfg.layers, 1);
        let mut bad = cfg.clone();
        bad.layers = 2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bayesian_init_converts_only_recurrent_weights() {
        let cfg = ModelConfig::new("bayesian-deari".parse().unwrap(), 2, 4, 2);
        let m = Model::init(ModelConfig { heads: 2, ..cfg }, 3).unwrap();
        let rho: Vec<_> = m.params.names().filter(|n| n.ends_with(".rho")).collect();
        assert_eq!(rho.len(), 12);
        assert!(rho.iter().all(|n| n.contains(".rnn.")));
        assert!(m.params.names().all(|n| !n.contains("attn") || !n.ends_with(".mu")));
    }
}
