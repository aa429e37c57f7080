//! Self-supervised metric learning on direction-tagged representations.
//!
//! Each sample yields one forward and one backward representation. The
//! same sample's opposite direction is the positive for an anchor; every
//! other sample's representation, in either direction, is a negative. Rows of
//! a representation matrix are laid out as `2 * sample + direction` with
//! forward `0` and backward `1`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{encode_sequence, AttentionShape};
use crate::binder::Binder;
use crate::brits::BidirectionalRun;
use crate::data::Direction;
use crate::error::{Error, Result};
use crate::tensor::{Array, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Transformed summary token.
    Cls,
    /// Transformed last hidden state.
    Last,
    /// Mean of the transformed hidden states.
    Mean,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Strategy::Cls),
            "last" => Ok(Strategy::Last),
            "mean" => Ok(Strategy::Mean),
            other => Err(Error::InvalidArgument(format!(
                "unknown representation strategy `{other}` (expected cls, last or mean)"
            ))),
        }
    }
}

/// Sign applied to the positive-pair exponent of the multi-similarity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveSign {
    /// `exp(+beta (S - eps))`.
    Printed,
    /// `exp(-beta (S - eps))`: positives are pulled together.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsParams {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sign: PositiveSign,
}

impl Default for MsParams {
    fn default() -> Self {
        MsParams {
            alpha: 2.0,
            beta: 50.0,
            epsilon: 1.0,
            sign: PositiveSign::Corrected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmlConfig {
    pub strategy: Strategy,
    pub margin: f64,
    pub weight: f64,
    pub ms: MsParams,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            strategy: Strategy::Cls,
            margin: 0.5,
            weight: 0.1,
            ms: MsParams::default(),
        }
    }
}

pub fn rep_index(sample: usize, direction: Direction) -> usize {
    2 * sample
        + match direction {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
}

/// Unit-norm `[B, H]` representation of a `[B, H]` hidden-state sequence.
/// With `encoder == None` the attention encoder is bypassed and the strategy
/// reduces the raw hidden states; `Cls` then has no meaning and is rejected.
pub fn extract_representation<'g>(
    p: &Binder<'g, '_>,
    encoder: Option<(&str, AttentionShape)>,
    hidden: &[Var<'g>],
    strategy: Strategy,
) -> Result<Var<'g>> {
    if hidden.is_empty() {
        return Err(Error::InvalidArgument("empty hidden-state sequence".into()));
    }
    let tokens: Vec<Var<'g>> = match encoder {
        Some((prefix, shape)) => {
            let x = encode_sequence(p, prefix, shape, hidden)?;
            (0..=hidden.len()).map(|i| x.select(i)).collect::<Result<_>>()?
        }
        None => {
            if strategy == Strategy::Cls {
                return Err(Error::InvalidArgument(
                    "the cls strategy requires the attention encoder".into(),
                ));
            }
            let mut t = Vec::with_capacity(hidden.len() + 1);
            t.push(hidden[0]);
            t.extend_from_slice(hidden);
            t
        }
    };
    let reduced = match strategy {
        Strategy::Cls => tokens[0],
        Strategy::Last => tokens[tokens.len() - 1],
        Strategy::Mean => {
            let mut acc = tokens[1];
            for &t in &tokens[2..] {
                acc = acc.add(t)?;
            }
            acc.scale(1.0 / (tokens.len() - 1) as f64)
        }
    };
    Ok(reduced.l2_normalize())
}

/// Mean over layers of per-layer `[B, H]` representations, renormalized.
pub fn squeeze_layers<'g>(reps: &[Var<'g>]) -> Result<Var<'g>> {
    let first = *reps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no layer representations".into()))?;
    if reps.len() == 1 {
        return Ok(first);
    }
    let mut acc = first;
    for &r in &reps[1..] {
        acc = acc.add(r)?;
    }
    Ok(acc.scale(1.0 / reps.len() as f64).l2_normalize())
}

/// Interleaves forward and backward `[N, H]` representations into `[2N, H]`.
pub fn interleave<'g>(fwd: Var<'g>, bwd: Var<'g>) -> Result<Var<'g>> {
    let shape = fwd.shape();
    let stacked = fwd.graph().stack(&[fwd, bwd])?;
    stacked.reshape(&[2 * shape[0], shape[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mined hard triplets over `2N` interleaved representation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSet {
    pub margin: f64,
    pub rows: usize,
    pub triplets: Vec<Triplet>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// `(negatives, positives)` masks `[rows, rows]`: row `i` flags the
    /// partners of anchor `i` appearing in any kept triplet.
    pub fn pair_masks(&self) -> (Array, Array) {
        let n = self.rows;
        let mut neg = Array::zeros(&[n, n]);
        let mut pos = Array::zeros(&[n, n]);
        for t in &self.triplets {
            neg.data_mut()[t.anchor * n + t.negative] = 1.0;
            pos.data_mut()[t.anchor * n + t.positive] = 1.0;
        }
        (neg, pos)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Keeps every candidate with `d(A, P) + margin >= d(A, N)`.
/// `reps` is `[2N, H]` in interleaved layout.
pub fn mine_triplets(reps: &Array, margin: f64) -> Result<TripletSet> {
    let sh = reps.shape();
    if sh.len() != 2 || !sh[0].is_multiple_of(2) {
        return Err(Error::shape("mine_triplets", &[sh]));
    }
    let (rows, h) = (sh[0], sh[1]);
    let row = |i: usize| &reps.data()[i * h..(i + 1) * h];
    let mut triplets = Vec::new();
    for anchor in 0..rows {
        let sample = anchor / 2;
        let positive = anchor ^ 1;
        let dp = distance(row(anchor), row(positive));
        for negative in 0..rows {
            if negative / 2 == sample {
                continue;
            }
            if dp + margin >= distance(row(anchor), row(negative)) {
                triplets.push(Triplet {
                    anchor,
                    positive,
                    negative,
                });
            }
        }
    }
    Ok(TripletSet {
        margin,
        rows,
        triplets,
    })
}

/// Multi-similarity loss over the mined pairs, averaged over all rows:
///
/// ```text
/// (1/|B|) sum_i [ (1/alpha) log(1 + sum_{n in N_i} exp(alpha (S_in - eps)))
///               + (1/beta)  log(1 + sum_{p in P_i} exp(±beta (S_ip - eps))) ]
/// ```
pub fn ms_loss<'g>(reps: Var<'g>, set: &TripletSet, params: &MsParams) -> Result<Var<'g>> {
    if params.alpha <= 0.0 || params.beta <= 0.0 {
        return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
    }
    if reps.shape()[0] != set.rows {
        return Err(Error::shape("ms_loss", &[&reps.shape(), &[set.rows]]));
    }
    ms_loss_from_similarity(reps.matmul(reps.transpose()?)?, set, params)
}

/// The same loss on a precomputed `[rows, rows]` similarity matrix.
pub fn ms_loss_from_similarity<'g>(sim: Var<'g>, set: &TripletSet, params: &MsParams) -> Result<Var<'g>> {
    if params.alpha <= 0.0 || params.beta <= 0.0 {
        return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
    }
    let rows = set.rows;
    if sim.shape() != [rows, rows] {
        return Err(Error::shape("ms_loss", &[&sim.shape(), &[rows, rows]]));
    }
    let sim = sim.shift(-params.epsilon);
    let (neg, pos) = set.pair_masks();
    let sign = match params.sign {
        PositiveSign::Printed => 1.0,
        PositiveSign::Corrected => -1.0,
    };
    let neg_term = sim
        .scale(params.alpha)
        .masked_log1p_sum_exp(&neg)?
        .scale(1.0 / params.alpha);
    let pos_term = sim
        .scale(sign * params.beta)
        .masked_log1p_sum_exp(&pos)?
        .scale(1.0 / params.beta);
    Ok(neg_term.add(pos_term)?.sum().scale(1.0 / rows as f64))
}

/// Squeezed per-direction representations of every layer, the mined set and
/// the resulting loss.
pub struct DmlOutput<'g> {
    pub reps: Var<'g>,
    pub triplets: TripletSet,
    pub loss: Var<'g>,
}

pub const DML_PREFIX: &str = "dml.";

pub fn dml_objective<'g>(
    p: &Binder<'g, '_>,
    encoder: Option<AttentionShape>,
    layers: &[BidirectionalRun<'g>],
    cfg: &DmlConfig,
) -> Result<DmlOutput<'g>> {
    let enc = encoder.map(|s| (DML_PREFIX, s));
    let mut fwd = Vec::with_capacity(layers.len());
    let mut bwd = Vec::with_capacity(layers.len());
    for run in layers {
        fwd.push(extract_representation(p, enc, &run.fwd.hidden, cfg.strategy)?);
        bwd.push(extract_representation(p, enc, &run.bwd.hidden, cfg.strategy)?);
    }
    let reps = interleave(squeeze_layers(&fwd)?, squeeze_layers(&bwd)?)?;
    let triplets = mine_triplets(&reps.value(), cfg.margin)?;
    let loss = ms_loss(reps, &triplets, &cfg.ms)?;
    Ok(DmlOutput {
        reps,
        triplets,
        loss,
    })
}
