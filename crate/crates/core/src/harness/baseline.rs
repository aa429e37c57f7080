//! Reference imputers.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SeriesBatch;
use crate::error::{Error, Result};
use crate::tensor::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Per-feature mean of the observed cells in the batch.
    Mean,
    /// Last observation carried forward; the feature mean before the first one.
    Locf,
    /// Linear interpolation in timestamp space; the nearest observation
    /// outside the observed range.
    Linear,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Mean, Baseline::Locf, Baseline::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Mean => "mean",
            Baseline::Locf => "locf",
            Baseline::Linear => "linear",
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Baseline::Mean),
            "locf" => Ok(Baseline::Locf),
            "linear" => Ok(Baseline::Linear),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

fn feature_means(batch: &SeriesBatch) -> Vec<f64> {
    let d = batch.num_features();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for (i, (&v, &m)) in batch.values.data().iter().zip(batch.mask.data()).enumerate() {
        if m != 0.0 {
            sum[i % d] += v;
            count[i % d] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Imputes every unobserved cell; observed cells pass through.
pub fn baseline_impute(batch: &SeriesBatch, method: Baseline) -> Array {
    let (b, t, d) = (batch.num_samples(), batch.num_steps(), batch.num_features());
    let means = feature_means(batch);
    let mut out = batch.values.clone();
    let idx = |s: usize, k: usize, f: usize| (s * t + k) * d + f;
    let mask = batch.mask.data();
    let x = batch.values.data();
    let stamps = batch.timestamps.data();
    for s in 0..b {
        for f in 0..d {
            let observed: Vec<usize> = (0..t).filter(|&k| mask[idx(s, k, f)] != 0.0).collect();
            for k in 0..t {
                if mask[idx(s, k, f)] != 0.0 {
                    continue;
                }
                let prev = observed.iter().rev().find(|&&o| o < k).copied();
                let next = observed.iter().find(|&&o| o > k).copied();
                let v = match method {
                    Baseline::Mean => means[f],
                    Baseline::Locf => prev.map_or(means[f], |p| x[idx(s, p, f)]),
                    Baseline::Linear => match (prev, next) {
                        (Some(p), Some(n)) => {
                            let (tp, tn, tk) = (stamps[s * t + p], stamps[s * t + n], stamps[s * t + k]);
                            let (vp, vn) = (x[idx(s, p, f)], x[idx(s, n, f)]);
                            if tn > tp {
                                vp + (vn - vp) * (tk - tp) / (tn - tp)
                            } else {
                                vp
                            }
                        }
                        (Some(p), None) => x[idx(s, p, f)],
                        (None, Some(n)) => x[idx(s, n, f)],
                        (None, None) => means[f],
                    },
                };
                out.data_mut()[idx(s, k, f)] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(stamps: &[f64], vals: &[f64]) -> SeriesBatch {
        let t = stamps.len();
        SeriesBatch::from_raw(
            &Array::new(&[1, t, 1], vals.to_vec()).unwrap(),
            Array::new(&[1, t], stamps.to_vec()).unwrap(),
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn fully_observed_is_identity() {
        let b = column(&[0.0, 1.0, 2.0], &[1.0, -2.0, 3.0]);
        for m in Baseline::ALL {
            assert_eq!(baseline_impute(&b, m), b.values);
        }
    }

    #[test]
    fn linear_in_timestamp_space() {
        let b = column(&[0.0, 4.0, 10.0], &[0.0, f64::NAN, 10.0]);
        assert_eq!(baseline_impute(&b, Baseline::Linear).data()[1], 4.0);
    }

    #[test]
    fn locf_carries_the_last_observation() {
        let b = column(&[0.0, 4.0, 5.0, 7.0, 9.0], &[2.5, f64::NAN, f64::NAN, f64::NAN, 6.0]);
        let out = baseline_impute(&b, Baseline::Locf);
        assert_eq!(out.data(), &[2.5, 2.5, 2.5, 2.5, 6.0]);
        let out = baseline_impute(&b, Baseline::Mean);
        assert_eq!(out.data()[2], 4.25);
    }
}
