//! Depth sweep: one training run per layer count with shared seeds.

use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::run;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub parameters: usize,
    pub mae: Option<f64>,
    pub mre: Option<f64>,
    pub mae_norm: Option<f64>,
    pub best_epoch: usize,
}

pub fn depth_sweep(base: &RunConfig, data: &Dataset, layers: &[usize]) -> Result<Vec<SweepRow>> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("empty layer list".into()));
    }
    layers
        .par_iter()
        .map(|&l| {
            let cfg = RunConfig {
                layers: l,
                ..base.clone()
            };
            if !cfg.variant.deep && l != 1 {
                return Err(Error::Config(format!(
                    "variant {} cannot be swept to {l} layers",
                    cfg.variant
                )));
            }
            let (_, report, _) = run(&cfg, data)?;
            let agg = report.aggregate.as_ref();
            Ok(SweepRow {
                layers: l,
                parameters: report.parameters.total,
                mae: agg.map(|a| a.mae_mean),
                mre: agg.map(|a| a.mre_mean),
                mae_norm: agg.map(|a| a.mae_norm_mean),
                best_epoch: report.folds[0].training.best_epoch,
            })
        })
        .collect()
}

/// `layers,parameters,mae,mre,mae_norm,best_epoch` with empty fields for
/// missing metrics.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("layers,parameters,mae,mre,mae_norm,best_epoch\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.layers,
            r.parameters,
            opt(r.mae),
            opt(r.mre),
            opt(r.mae_norm),
            r.best_epoch
        );
    }
    s
}
