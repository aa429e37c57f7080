use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SeriesBatch;
use crate::error::{Error, Result};
use crate::tensor::Array;

/// Holds out observed cells for evaluation.
///
/// Every observed cell is independently selected with probability `fraction`
/// (cells visited in `[B, T, D]` order under a ChaCha stream seeded with
/// `seed`). Selected cells are flagged in `eval_mask`, cleared from the mask,
/// zero-filled in `values`, and their values kept in `truth`. Deltas are
/// recomputed for the new mask.
pub fn apply_eval_mask(batch: &SeriesBatch, fraction: f64, seed: u64) -> Result<SeriesBatch> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "mask fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut out = batch.clone();
    let shape = batch.values.shape().to_vec();
    let mut eval = out.eval_mask.take().unwrap_or_else(|| Array::zeros(&shape));
    let mut truth = out.truth.take().unwrap_or_else(|| Array::zeros(&shape));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..out.mask.len() {
        if out.mask.data()[i] == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        if u < fraction {
            eval.data_mut()[i] = 1.0;
            truth.data_mut()[i] = out.values.data()[i];
            out.mask.data_mut()[i] = 0.0;
            out.values.data_mut()[i] = 0.0;
        }
    }
    out.eval_mask = Some(eval);
    out.truth = Some(truth);
    out.refresh_deltas()?;
    Ok(out)
}
