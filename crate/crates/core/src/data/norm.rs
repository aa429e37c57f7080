use serde::{Deserialize, Serialize};

use super::SeriesBatch;
use crate::tensor::Array;

/// Per-feature standardization fitted on observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity transform for `d` features.
    pub fn identity(d: usize) -> Self {
        NormStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Fits mean and population std over observed cells of the given samples
    /// (all samples when `samples` is `None`). Held-out cells are excluded
    /// since they are not in the mask.
    pub fn fit(batch: &SeriesBatch, samples: Option<&[usize]>) -> Self {
        let (b, t, d) = (batch.num_samples(), batch.num_steps(), batch.num_features());
        let all: Vec<usize>;
        let samples = match samples {
            Some(s) => s,
            None => {
                all = (0..b).collect();
                &all
            }
        };
        let mut count = vec![0usize; d];
        let mut sum = vec![0.0; d];
        for &s in samples {
            for step in 0..t {
                for f in 0..d {
                    if batch.mask.at(&[s, step, f]) != 0.0 {
                        count[f] += 1;
                        sum[f] += batch.values.at(&[s, step, f]);
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..d)
            .map(|f| if count[f] > 0 { sum[f] / count[f] as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; d];
        for &s in samples {
            for step in 0..t {
                for f in 0..d {
                    if batch.mask.at(&[s, step, f]) != 0.0 {
                        sq[f] += (batch.values.at(&[s, step, f]) - mean[f]).powi(2);
                    }
                }
            }
        }
        let std = (0..d)
            .map(|f| {
                let sd = if count[f] > 0 {
                    (sq[f] / count[f] as f64).sqrt()
                } else {
                    0.0
                };
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        NormStats { mean, std }
    }

    /// Standardizes observed values and held-out truth; unobserved cells stay 0.
    pub fn apply(&self, batch: &SeriesBatch) -> SeriesBatch {
        let mut out = batch.clone();
        standardize(&mut out.values, &out.mask, self);
        if let (Some(t), Some(e)) = (&mut out.truth, &out.eval_mask) {
            standardize(t, e, self);
        }
        out
    }

    /// Inverse of [`NormStats::apply`].
    pub fn revert(&self, batch: &SeriesBatch) -> SeriesBatch {
        let mut out = batch.clone();
        let mask = out.mask.clone();
        out.values = self.denormalize_masked(&out.values, &mask);
        if let (Some(t), Some(e)) = (&out.truth, &out.eval_mask) {
            out.truth = Some(self.denormalize_masked(t, e));
        }
        out
    }

    /// Maps every cell of a `[.., D]` array back to raw units.
    pub fn denormalize(&self, a: &Array) -> Array {
        let d = self.mean.len();
        Array::from_fn(a.shape(), |i| {
            let f = i % d;
            a.data()[i] * self.std[f] + self.mean[f]
        })
    }

    pub fn normalize(&self, a: &Array) -> Array {
        let d = self.mean.len();
        Array::from_fn(a.shape(), |i| {
            let f = i % d;
            (a.data()[i] - self.mean[f]) / self.std[f]
        })
    }

    fn denormalize_masked(&self, a: &Array, mask: &Array) -> Array {
        let d = self.mean.len();
        Array::from_fn(a.shape(), |i| {
            if mask.data()[i] == 0.0 {
                0.0
            } else {
                let f = i % d;
                a.data()[i] * self.std[f] + self.mean[f]
            }
        })
    }
}

fn standardize(a: &mut Array, mask: &Array, stats: &NormStats) {
    let d = stats.mean.len();
    for (i, v) in a.data_mut().iter_mut().enumerate() {
        let f = i % d;
        *v = if mask.data()[i] == 0.0 {
            0.0
        } else {
            (*v - stats.mean[f]) / stats.std[f]
        };
    }
}
