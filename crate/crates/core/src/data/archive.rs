//! Prepared-dataset archive.
//!
//! JSON object with fields `format` (`"deari-dataset"`), `version` (1),
//! `seed`, `mask_fraction`, `split` (one of `train`/`val`/`test` per sample),
//! `stats` (`mean`, `std` per feature) and `batch`. The batch holds normalized
//! `values`, `mask`, `delta_fwd`, `delta_bwd`, `eval_mask`, `truth` (each an
//! object `{shape, data}` with row-major `data`), `timestamps` and
//! `feature_names`. Floats are written in shortest round-trip form, so a
//! save/load cycle is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{apply_eval_mask, NormStats, SeriesBatch};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "deari-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub mask_fraction: f64,
    pub split: Vec<Split>,
    pub stats: NormStats,
    pub batch: SeriesBatch,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, split: Split) -> SeriesBatch {
        self.batch.select(&self.indices(split))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let ds: Dataset = serde_json::from_reader(r)?;
        if ds.format != DATASET_FORMAT || ds.version != DATASET_VERSION {
            return Err(Error::Data(format!(
                "{}: expected {DATASET_FORMAT} v{DATASET_VERSION}, found {} v{}",
                path.display(),
                ds.format,
                ds.version
            )));
        }
        if ds.split.len() != ds.batch.num_samples() {
            return Err(Error::Data(format!(
                "{}: {} split labels for {} samples",
                path.display(),
                ds.split.len(),
                ds.batch.num_samples()
            )));
        }
        Ok(ds)
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Permutation of `0..n` ordered by a seeded hash of each sample index.
pub fn sample_order(n: usize, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = (0..n)
        .map(|i| (splitmix64(splitmix64(seed) ^ i as u64), i))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Holds out `mask_fraction` of observed cells, assigns samples to
/// train/val/test, and standardizes with statistics from the training split.
pub fn prepare(
    raw: &SeriesBatch,
    mask_fraction: f64,
    seed: u64,
    val_fraction: f64,
    test_fraction: f64,
) -> Result<Dataset> {
    let n = raw.num_samples();
    if !(0.0..1.0).contains(&(val_fraction + test_fraction)) || val_fraction < 0.0 || test_fraction < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "validation and test fractions {val_fraction} + {test_fraction} leave no training data"
        )));
    }
    let masked = apply_eval_mask(raw, mask_fraction, seed)?;
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_test + n_val >= n {
        return Err(Error::Data(format!("{n} samples are too few to split")));
    }
    let mut split = vec![Split::Train; n];
    for (rank, i) in sample_order(n, seed).into_iter().enumerate() {
        if rank < n_test {
            split[i] = Split::Test;
        } else if rank < n_test + n_val {
            split[i] = Split::Val;
        }
    }
    let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
    let stats = NormStats::fit(&masked, Some(&train));
    Ok(Dataset {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed,
        mask_fraction,
        split,
        batch: stats.apply(&masked),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    fn raw(n: usize) -> SeriesBatch {
        let data = Array::from_fn(&[n, 4, 2], |i| {
            if i % 7 == 3 {
                f64::NAN
            } else {
                (i as f64 * 0.731).sin() * 10.0 + 1.0 / 3.0
            }
        });
        let ts = Array::from_fn(&[n, 4], |i| (i % 4) as f64 * 1.5);
        SeriesBatch::from_raw(&data, ts, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn archive_round_trip_is_lossless() {
        let ds = prepare(&raw(20), 0.2, 9, 0.1, 0.1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.save(f.path()).unwrap();
        let back = Dataset::load(f.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn split_sizes() {
        let ds = prepare(&raw(100), 0.1, 3, 0.1, 0.1).unwrap();
        assert_eq!(ds.indices(Split::Test).len(), 10);
        assert_eq!(ds.indices(Split::Val).len(), 10);
        assert_eq!(ds.indices(Split::Train).len(), 80);
    }

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = sample_order(50, 1);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, sample_order(50, 1));
        assert_ne!(a, sample_order(50, 2));
    }
}
