//! Series batches, observation masks and time-gap matrices.

mod archive;
mod csv;
mod mask;
mod norm;

use serde::{Deserialize, Serialize};

pub use self::archive::{prepare, sample_order, splitmix64, Dataset, Split};
pub use self::csv::{ingest_csv, CsvSchema, Layout, TimestampSpec};
pub use self::mask::apply_eval_mask;
pub use self::norm::NormStats;
use crate::error::{Error, Result};
use crate::tensor::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

/// A batch of `B` series of `T` steps over `D` features.
///
/// `values`, `mask`, `delta_fwd`, `delta_bwd`, `eval_mask` and `truth` are all
/// `[B, T, D]`; `timestamps` is `[B, T]`. Both delta matrices are indexed in
/// forward time: `delta_bwd[b, t, d]` is the gap the backward pass sees when
/// it reaches step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBatch {
    pub values: Array,
    pub mask: Array,
    pub delta_fwd: Array,
    pub delta_bwd: Array,
    pub timestamps: Array,
    /// Cells observed in the raw data but held out for evaluation.
    pub eval_mask: Option<Array>,
    /// Held-out ground truth; nonzero only where `eval_mask` is set.
    pub truth: Option<Array>,
    pub feature_names: Vec<String>,
}

impl SeriesBatch {
    /// Builds a batch from raw `[B, T, D]` values using NaN as the missing marker.
    pub fn from_raw(raw: &Array, timestamps: Array, feature_names: Vec<String>) -> Result<Self> {
        let sh = raw.shape();
        if sh.len() != 3 || timestamps.shape() != [sh[0], sh[1]] {
            return Err(Error::shape("from_raw", &[sh, timestamps.shape()]));
        }
        if feature_names.len() != sh[2] {
            return Err(Error::Data(format!(
                "{} feature names for {} features",
                feature_names.len(),
                sh[2]
            )));
        }
        let (values, mask) = build_mask(raw);
        let delta_fwd = batch_delta(&timestamps, &mask, Direction::Forward)?;
        let delta_bwd = batch_delta(&timestamps, &mask, Direction::Backward)?;
        Ok(SeriesBatch {
            values,
            mask,
            delta_fwd,
            delta_bwd,
            timestamps,
            eval_mask: None,
            truth: None,
            feature_names,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn num_features(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn delta(&self, direction: Direction) -> &Array {
        match direction {
            Direction::Forward => &self.delta_fwd,
            Direction::Backward => &self.delta_bwd,
        }
    }

    /// Recomputes both delta matrices from the current mask.
    pub fn refresh_deltas(&mut self) -> Result<()> {
        self.delta_fwd = batch_delta(&self.timestamps, &self.mask, Direction::Forward)?;
        self.delta_bwd = batch_delta(&self.timestamps, &self.mask, Direction::Backward)?;
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> SeriesBatch {
        SeriesBatch {
            values: self.values.select_rows(indices),
            mask: self.mask.select_rows(indices),
            delta_fwd: self.delta_fwd.select_rows(indices),
            delta_bwd: self.delta_bwd.select_rows(indices),
            timestamps: self.timestamps.select_rows(indices),
            eval_mask: self.eval_mask.as_ref().map(|a| a.select_rows(indices)),
            truth: self.truth.as_ref().map(|a| a.select_rows(indices)),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn num_observed(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }

    pub fn num_eval(&self) -> usize {
        self.eval_mask
            .as_ref()
            .map_or(0, |e| e.data().iter().filter(|&&m| m != 0.0).count())
    }

    /// Raw-scale ground truth where known: observed values plus held-out truth.
    pub fn ground_truth(&self) -> Array {
        let mut out = self.values.clone();
        if let (Some(e), Some(t)) = (&self.eval_mask, &self.truth) {
            for i in 0..out.len() {
                if e.data()[i] != 0.0 {
                    out.data_mut()[i] = t.data()[i];
                }
            }
        }
        out
    }
}

/// Splits raw values into zero-filled values and an observation mask.
pub fn build_mask(raw: &Array) -> (Array, Array) {
    let mask = raw.map(|v| if v.is_nan() { 0.0 } else { 1.0 });
    let values = raw.map(|v| if v.is_nan() { 0.0 } else { v });
    (values, mask)
}

/// Per-feature time since the last observation, for one `[T, D]` series.
///
/// The gap accumulates across a step whose *previous* cell was unobserved:
/// `delta[t] = gap(t) + (1 - m[t-1]) * delta[t-1]`, `delta[0] = 0`. The
/// backward direction runs the same recurrence over the reversed sequence and
/// returns the result in forward time order.
pub fn compute_delta(timestamps: &[f64], mask: &Array, direction: Direction) -> Result<Array> {
    let t_len = timestamps.len();
    if mask.shape().len() != 2 || mask.shape()[0] != t_len {
        return Err(Error::shape("compute_delta", &[&[t_len], mask.shape()]));
    }
    for w in timestamps.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(Error::Data(format!(
                "timestamps must be non-decreasing, found {} after {}",
                w[1], w[0]
            )));
        }
    }
    let d = mask.shape()[1];
    let mut delta = Array::zeros(&[t_len, d]);
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..t_len).collect(),
        Direction::Backward => (0..t_len).rev().collect(),
    };
    for k in 1..order.len() {
        let (prev, cur) = (order[k - 1], order[k]);
        let gap = (timestamps[cur] - timestamps[prev]).abs();
        for f in 0..d {
            let carried = if mask.at(&[prev, f]) == 0.0 {
                delta.at(&[prev, f])
            } else {
                0.0
            };
            delta.set(&[cur, f], gap + carried);
        }
    }
    Ok(delta)
}

fn batch_delta(timestamps: &Array, mask: &Array, direction: Direction) -> Result<Array> {
    let (b, t, d) = (mask.shape()[0], mask.shape()[1], mask.shape()[2]);
    let mut out = Vec::with_capacity(b * t * d);
    for s in 0..b {
        let stamps = &timestamps.data()[s * t..(s + 1) * t];
        let m = Array::new(&[t, d], mask.data()[s * t * d..(s + 1) * t * d].to_vec())?;
        out.extend(compute_delta(stamps, &m, direction)?.into_data());
    }
    Array::new(&[b, t, d], out)
}
