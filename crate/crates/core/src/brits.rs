//! Bidirectional recurrent imputation cell.
//!
//! One step of a direction, for inputs `x`, mask `m`, gaps `delta` and the
//! previous hidden state `h`:
//!
//! ```text
//! gamma_h = exp(-max(0, delta W_gh + b_gh))
//! h_dec   = h * gamma_h
//! x_hat   = h_dec W_x + b_x
//! x_hc    = m * x + (1 - m) * x_hat
//! x_fc    = x_hc (W_z * (1 - I)) + b_z
//! gamma_f = exp(-max(0, delta W_gf + b_gf))
//! beta    = sigmoid([gamma_f, m] W_b + b_b)
//! x_c     = beta * x_fc + (1 - beta) * x_hc
//! c       = m * x + (1 - m) * x_c
//! h'      = rnn([c, m], h_dec)
//! ```
//!
//! Row-vector convention throughout: activations are `[B, F]` and weights
//! `[F_in, F_out]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binder::Binder;
use crate::data::{Direction, SeriesBatch};
use crate::error::Result;
use crate::tensor::{Array, ParamStore, Var};
#[cfg(test)]
use crate::tensor::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Gru,
    Lstm,
}

impl CellType {
    fn gates(self) -> usize {
        match self {
            CellType::Gru => 3,
            CellType::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellShape {
    pub features: usize,
    pub hidden: usize,
    pub cell: CellType,
}

/// Parameter names of one direction's cell, relative to its prefix.
const DETERMINISTIC: [&str; 10] = [
    "gamma_h.w", "gamma_h.b", "hist.w", "hist.b", "feat.w", "feat.b", "gamma_f.w", "gamma_f.b",
    "beta.w", "beta.b",
];

/// Recurrent update weights: input `W` (`rnn.w`), hidden `U` (`rnn.u`), bias.
pub const RECURRENT: [&str; 3] = ["rnn.w", "rnn.u", "rnn.b"];

fn shapes(s: CellShape) -> Vec<(&'static str, Vec<usize>)> {
    let (d, h, g) = (s.features, s.hidden, s.cell.gates());
    let dims: [Vec<usize>; 13] = [
        vec![d, h],
        vec![h],
        vec![h, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![2 * d, d],
        vec![d],
        vec![2 * d, g * h],
        vec![h, g * h],
        vec![g * h],
    ];
    DETERMINISTIC
        .iter()
        .chain(RECURRENT.iter())
        .copied()
        .zip(dims)
        .collect()
}

/// Scalar parameter count of one direction's cell.
pub fn cell_param_count(s: CellShape) -> usize {
    shapes(s).iter().map(|(_, d)| d.iter().product::<usize>()).sum()
}

/// Uniform `±1/sqrt(fan_in)` weights; decay biases start at zero.
pub fn init_cell_params(store: &mut ParamStore, prefix: &str, s: CellShape, rng: &mut impl Rng) {
    let (d, h) = (s.features, s.hidden);
    for (name, dims) in shapes(s) {
        let fan_in = match name {
            "gamma_h.w" | "gamma_h.b" | "feat.w" | "feat.b" | "gamma_f.w" | "gamma_f.b" => d,
            "hist.w" | "hist.b" | "rnn.u" => h,
            "beta.w" | "beta.b" | "rnn.w" | "rnn.b" => 2 * d,
            _ => unreachable!("unlisted parameter {name}"),
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = if name == "gamma_h.b" || name == "gamma_f.b" {
            Array::zeros(&dims)
        } else {
            Array::from_fn(&dims, |_| rng.random_range(-bound..=bound))
        };
        store.insert(format!("{prefix}{name}"), value);
    }
}

/// `exp(-max(0, delta W + b))`, elementwise in `(0, 1]`.
pub fn temporal_decay<'g>(delta: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    Ok(delta.matmul(w)?.add(b)?.relu().neg().exp())
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput<'g> {
    pub gamma_h: Var<'g>,
    pub h_decayed: Var<'g>,
    pub x_hat: Var<'g>,
    pub x_hc: Var<'g>,
    pub x_fc: Var<'g>,
    pub gamma_f: Var<'g>,
    pub beta: Var<'g>,
    pub x_c: Var<'g>,
    pub imputation: Var<'g>,
    pub hidden: Var<'g>,
    /// LSTM memory cell; `None` for GRU.
    pub memory: Option<Var<'g>>,
}

/// `W_z` with its diagonal structurally removed.
fn zero_diagonal<'g>(w: Var<'g>, d: usize) -> Result<Var<'g>> {
    let off = Array::from_fn(&[d, d], |i| if i / d == i % d { 0.0 } else { 1.0 });
    w.mul(w.graph().constant(off))
}

/// One recurrent imputation step.
#[allow(clippy::too_many_arguments)]
pub fn cell_step<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: CellShape,
    x: Var<'g>,
    m: Var<'g>,
    delta: Var<'g>,
    h_prev: Var<'g>,
    c_prev: Option<Var<'g>>,
) -> Result<StepOutput<'g>> {
    let get = |n: &str| p.get(&format!("{prefix}{n}"));
    let gamma_h = temporal_decay(delta, get("gamma_h.w")?, get("gamma_h.b")?)?;
    let h_decayed = h_prev.mul(gamma_h)?;
    let x_hat = h_decayed.matmul(get("hist.w")?)?.add(get("hist.b")?)?;
    let not_m = m.one_minus();
    let mx = m.mul(x)?;
    let x_hc = mx.add(not_m.mul(x_hat)?)?;
    let w_z = zero_diagonal(get("feat.w")?, s.features)?;
    let x_fc = x_hc.matmul(w_z)?.add(get("feat.b")?)?;
    let gamma_f = temporal_decay(delta, get("gamma_f.w")?, get("gamma_f.b")?)?;
    let g = x.graph();
    let beta = g
        .concat(&[gamma_f, m])?
        .matmul(get("beta.w")?)?
        .add(get("beta.b")?)?
        .sigmoid();
    let x_c = beta.mul(x_fc)?.add(beta.one_minus().mul(x_hc)?)?;
    let imputation = mx.add(not_m.mul(x_c)?)?;

    let input = g.concat(&[imputation, m])?;
    let (hidden, memory) = recurrent_update(p, prefix, s, input, h_decayed, c_prev)?;
    Ok(StepOutput {
        gamma_h,
        h_decayed,
        x_hat,
        x_hc,
        x_fc,
        gamma_f,
        beta,
        x_c,
        imputation,
        hidden,
        memory,
    })
}

/// The recurrent-cell update on input `[c, m]` from the decayed state.
pub fn recurrent_update<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: CellShape,
    input: Var<'g>,
    h: Var<'g>,
    c_prev: Option<Var<'g>>,
) -> Result<(Var<'g>, Option<Var<'g>>)> {
    let hs = s.hidden;
    let w = p.get(&format!("{prefix}rnn.w"))?;
    let u = p.get(&format!("{prefix}rnn.u"))?;
    let b = p.get(&format!("{prefix}rnn.b"))?;
    let gx = input.matmul(w)?.add(b)?;
    let gh = h.matmul(u)?;
    match s.cell {
        CellType::Gru => {
            let r = gx.slice_last(0, hs)?.add(gh.slice_last(0, hs)?)?.sigmoid();
            let z = gx
                .slice_last(hs, 2 * hs)?
                .add(gh.slice_last(hs, 2 * hs)?)?
                .sigmoid();
            let n = gx
                .slice_last(2 * hs, 3 * hs)?
                .add(r.mul(gh.slice_last(2 * hs, 3 * hs)?)?)?
                .tanh();
            let next = z.one_minus().mul(n)?.add(z.mul(h)?)?;
            Ok((next, None))
        }
        CellType::Lstm => {
            let pre = gx.add(gh)?;
            let i = pre.slice_last(0, hs)?.sigmoid();
            let f = pre.slice_last(hs, 2 * hs)?.sigmoid();
            let gg = pre.slice_last(2 * hs, 3 * hs)?.tanh();
            let o = pre.slice_last(3 * hs, 4 * hs)?.sigmoid();
            let c_prev = match c_prev {
                Some(c) => c,
                None => input.graph().constant(Array::zeros(&h.shape())),
            };
            let c = f.mul(c_prev)?.add(i.mul(gg)?)?;
            let next = o.mul(c.tanh())?;
            Ok((next, Some(c)))
        }
    }
}

/// Result of running one direction over a batch.
pub struct DirectionRun<'g> {
    /// Step outputs in forward time order.
    pub steps: Vec<StepOutput<'g>>,
    /// Hidden states `h_0 .. h_T` in processing order.
    pub hidden: Vec<Var<'g>>,
    /// Masked MAE of `x_hat`, `x_fc` and `x_c`, summed.
    pub loss: Var<'g>,
}

impl<'g> DirectionRun<'g> {
    pub fn imputations(&self) -> Vec<Var<'g>> {
        self.steps.iter().map(|s| s.imputation).collect()
    }
}

/// Unrolls one direction. The backward direction consumes the reversed
/// sequence with its own gaps and returns outputs in forward time order.
pub fn run_direction<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: CellShape,
    batch: &SeriesBatch,
    direction: Direction,
    h0: Option<Var<'g>>,
) -> Result<DirectionRun<'g>> {
    let g = p.graph();
    let (b, t) = (batch.num_samples(), batch.num_steps());
    let h0 = match h0 {
        Some(h) => h,
        None => g.constant(Array::zeros(&[b, s.hidden])),
    };
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..t).collect(),
        Direction::Backward => (0..t).rev().collect(),
    };
    let delta = batch.delta(direction);
    let mut hidden = vec![h0];
    let mut memory = None;
    let mut steps = Vec::with_capacity(t);
    let mut abs_err: Option<Var<'g>> = None;
    for &step in &order {
        let x = g.constant(batch.values.time_slice(step));
        let m = g.constant(batch.mask.time_slice(step));
        let dl = g.constant(delta.time_slice(step));
        let h = *hidden.last().expect("h0 present");
        let out = cell_step(p, prefix, s, x, m, dl, h, memory)?;
        // |x_hat - x| + |x_fc - x| + |x_c - x| on observed cells
        let err = out
            .x_hat
            .sub(x)?
            .abs()
            .add(out.x_fc.sub(x)?.abs())?
            .add(out.x_c.sub(x)?.abs())?
            .mul(m)?
            .sum();
        abs_err = Some(match abs_err {
            Some(acc) => acc.add(err)?,
            None => err,
        });
        memory = out.memory;
        hidden.push(out.hidden);
        steps.push(out);
    }
    if direction == Direction::Backward {
        steps.reverse();
    }
    let observed = batch.num_observed();
    let loss = match abs_err {
        Some(e) if observed > 0 => e.scale(1.0 / observed as f64),
        _ => {
            log::warn!("batch has no observed cells; reconstruction loss is 0");
            g.constant(Array::scalar(0.0))
        }
    };
    Ok(DirectionRun {
        steps,
        hidden,
        loss,
    })
}

/// Elementwise mean of the two directions' imputations.
pub fn combine_bidirectional<'g>(fwd: &[Var<'g>], bwd: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
    fwd.iter()
        .zip(bwd)
        .map(|(&f, &b)| Ok(f.add(b)?.scale(0.5)))
        .collect()
}

/// Direction losses plus `consistency_weight * mean|C_fwd - C_bwd|`.
pub fn reconstruction_loss<'g>(
    fwd: &DirectionRun<'g>,
    bwd: &DirectionRun<'g>,
    consistency_weight: f64,
) -> Result<Var<'g>> {
    let mut gap: Option<Var<'g>> = None;
    let mut cells = 0usize;
    for (f, b) in fwd.steps.iter().zip(&bwd.steps) {
        let d = f.imputation.sub(b.imputation)?.abs().sum();
        cells += f.imputation.shape().iter().product::<usize>();
        gap = Some(match gap {
            Some(acc) => acc.add(d)?,
            None => d,
        });
    }
    let total = fwd.loss.add(bwd.loss)?;
    match gap {
        Some(gap) if cells > 0 => total.add(gap.scale(consistency_weight / cells as f64)),
        _ => Ok(total),
    }
}

/// Both directions of one bidirectional layer.
pub struct BidirectionalRun<'g> {
    pub fwd: DirectionRun<'g>,
    pub bwd: DirectionRun<'g>,
    /// Combined imputation per step, forward time order.
    pub imputation: Vec<Var<'g>>,
    pub loss: Var<'g>,
}

/// Runs `{prefix}fwd.` and `{prefix}bwd.` cells and combines them.
pub fn bidirectional<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: CellShape,
    batch: &SeriesBatch,
    h0: (Option<Var<'g>>, Option<Var<'g>>),
    consistency_weight: f64,
) -> Result<BidirectionalRun<'g>> {
    let fwd = run_direction(p, &format!("{prefix}fwd."), s, batch, Direction::Forward, h0.0)?;
    let bwd = run_direction(p, &format!("{prefix}bwd."), s, batch, Direction::Backward, h0.1)?;
    let imputation = combine_bidirectional(&fwd.imputations(), &bwd.imputations())?;
    let loss = reconstruction_loss(&fwd, &bwd, consistency_weight)?;
    Ok(BidirectionalRun {
        fwd,
        bwd,
        imputation,
        loss,
    })
}

/// Assembles per-step `[B, D]` values into a `[B, T, D]` array.
pub fn collect_steps(steps: &[Var<'_>]) -> Array {
    let first = steps[0].value();
    let (b, d) = (first.shape()[0], first.shape()[1]);
    let mut out = Array::zeros(&[b, steps.len(), d]);
    for (t, v) in steps.iter().enumerate() {
        out.set_time_slice(t, &v.value());
    }
    out
}
