//! Imputation error over held-out cells.

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, SeriesBatch};
use crate::error::{Error, Result};
use crate::tensor::Array;

/// Errors over the evaluation cells, in raw units and in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mae: f64,
    pub mre: f64,
    pub mae_norm: f64,
    pub mre_norm: f64,
}

/// `(MAE, MRE)` of `pred` against `truth` over cells where `cells != 0`.
pub fn mae_mre(pred: &Array, truth: &Array, cells: &Array) -> Result<(f64, f64, usize)> {
    if pred.shape() != truth.shape() || pred.shape() != cells.shape() {
        return Err(Error::shape("evaluate", &[pred.shape(), truth.shape(), cells.shape()]));
    }
    let (mut abs_err, mut abs_truth, mut count) = (0.0, 0.0, 0usize);
    for ((&p, &t), &c) in pred.data().iter().zip(truth.data()).zip(cells.data()) {
        if c != 0.0 {
            abs_err += (p - t).abs();
            abs_truth += t.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("no evaluation cells".into()));
    }
    if abs_truth <= 0.0 {
        return Err(Error::Data("ground truth is zero on every evaluation cell".into()));
    }
    Ok((abs_err / count as f64, abs_err / abs_truth, count))
}

/// Scores a normalized `[B, T, D]` imputation on the batch's evaluation cells.
pub fn evaluate(pred: &Array, batch: &SeriesBatch, stats: &NormStats) -> Result<Metrics> {
    let (eval, truth) = match (&batch.eval_mask, &batch.truth) {
        (Some(e), Some(t)) => (e, t),
        _ => return Err(Error::Data("batch has no evaluation mask".into())),
    };
    let (mae_norm, mre_norm, count) = mae_mre(pred, truth, eval)?;
    let (mae, mre, _) = mae_mre(&stats.denormalize(pred), &stats.denormalize(truth), eval)?;
    Ok(Metrics {
        count,
        mae,
        mre,
        mae_norm,
        mre_norm,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}
