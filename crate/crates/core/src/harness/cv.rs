//! k-fold cross-validation.

use rayon::prelude::*;

use super::config::RunConfig;
use super::train::{run_fold, Aggregate, MetricsReport};
use crate::data::{sample_order, splitmix64, Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::stack::parameter_count;

/// Fold index of every sample: samples are ordered by a seeded hash of their
/// index and dealt into `k` contiguous folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("{k} folds; at least 2 are required")));
    }
    if n < k {
        return Err(Error::Data(format!("{n} samples cannot fill {k} folds")));
    }
    let mut fold = vec![0; n];
    for (rank, i) in sample_order(n, seed).into_iter().enumerate() {
        fold[i] = rank * k / n;
    }
    Ok(fold)
}

/// Re-splits a prepared dataset for fold `f`: that fold is the test set,
/// a tenth of the samples from the rest is the validation set, and
/// normalization is refitted on the training samples.
pub fn fold_dataset(data: &Dataset, folds: &[usize], f: usize) -> Dataset {
    let n = folds.len();
    let raw = data.stats.revert(&data.batch);
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut split: Vec<Split> = folds
        .iter()
        .map(|&k| if k == f { Split::Test } else { Split::Train })
        .collect();
    let mut taken = 0;
    for i in sample_order(n, splitmix64(data.seed ^ (f as u64 + 1))) {
        if taken == n_val {
            break;
        }
        if split[i] == Split::Train {
            split[i] = Split::Val;
            taken += 1;
        }
    }
    let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
    let stats = NormStats::fit(&raw, Some(&train));
    Dataset {
        split,
        batch: stats.apply(&raw),
        stats,
        ..data.clone()
    }
}

/// Trains one model per fold (in parallel) and aggregates the test metrics.
pub fn cross_validate(cfg: &RunConfig, data: &Dataset, k: usize) -> Result<MetricsReport> {
    let folds = fold_assignment(data.batch.num_samples(), k, data.seed)?;
    let reports = (0..k)
        .into_par_iter()
        .map(|f| run_fold(cfg, f, &fold_dataset(data, &folds, f)).map(|(_, r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        config: cfg.clone(),
        data_seed: data.seed,
        mask_fraction: data.mask_fraction,
        parameters: parameter_count(&cfg.model_config(data.batch.num_features()).stack()),
        aggregate: Aggregate::from_folds(&reports),
        folds: reports,
    })
}
