//! Transformer encoder over a sequence of hidden states with a prepended
//! learnable summary token.
//!
//! Each encoder block is post-norm:
//! `u = LN(MSA(x) + x)`, `y = LN(FFN(u) + u)`, with a ReLU feed-forward
//! network and per-block affine layer norms. No positional encoding is added,
//! so the summary token is invariant to permutations of the other tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binder::Binder;
use crate::error::{Error, Result};
use crate::tensor::{Array, ParamStore, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub hidden: usize,
    pub heads: usize,
    /// Number of encoder blocks.
    pub depth: usize,
    pub ffn: usize,
}

impl AttentionShape {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn encoder_shapes(s: AttentionShape) -> Vec<(&'static str, Vec<usize>)> {
    let (h, f) = (s.hidden, s.ffn);
    vec![
        ("wq", vec![h, h]),
        ("bq", vec![h]),
        ("wk", vec![h, h]),
        ("bk", vec![h]),
        ("wv", vec![h, h]),
        ("bv", vec![h]),
        ("wo", vec![h, h]),
        ("bo", vec![h]),
        ("ln1.g", vec![h]),
        ("ln1.b", vec![h]),
        ("ff1.w", vec![h, f]),
        ("ff1.b", vec![f]),
        ("ff2.w", vec![f, h]),
        ("ff2.b", vec![h]),
        ("ln2.g", vec![h]),
        ("ln2.b", vec![h]),
    ]
}

/// Scalars in one encoder block.
pub fn encoder_param_count(s: AttentionShape) -> usize {
    encoder_shapes(s)
        .iter()
        .map(|(_, d)| d.iter().product::<usize>())
        .sum()
}

pub fn init_attention_params(
    store: &mut ParamStore,
    prefix: &str,
    s: AttentionShape,
    rng: &mut impl Rng,
) {
    let h = s.hidden;
    let bound = 1.0 / (h as f64).sqrt();
    store.insert(
        format!("{prefix}cls"),
        Array::from_fn(&[h], |_| rng.random_range(-bound..=bound)),
    );
    for e in 0..s.depth {
        for (name, dims) in encoder_shapes(s) {
            let value = match name {
                "ln1.g" | "ln2.g" => Array::ones(&dims),
                "ln1.b" | "ln2.b" => Array::zeros(&dims),
                _ => {
                    let fan_in = if name.starts_with("ff2") { s.ffn } else { h };
                    let b = 1.0 / (fan_in as f64).sqrt();
                    Array::from_fn(&dims, |_| rng.random_range(-b..=b))
                }
            };
            store.insert(format!("{prefix}enc{e}.{name}"), value);
        }
    }
}

/// Multi-head self-attention over `[B, S, H]`; also returns each head's
/// `[B, S, S]` attention weights.
pub fn self_attention<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: AttentionShape,
    x: Var<'g>,
) -> Result<(Var<'g>, Vec<Var<'g>>)> {
    let get = |n: &str| p.get(&format!("{prefix}{n}"));
    let q = x.matmul(get("wq")?)?.add(get("bq")?)?;
    let k = x.matmul(get("wk")?)?.add(get("bk")?)?;
    let v = x.matmul(get("wv")?)?.add(get("bv")?)?;
    let hd = s.hidden / s.heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(s.heads);
    let mut weights = Vec::with_capacity(s.heads);
    for i in 0..s.heads {
        let (a, b) = (i * hd, (i + 1) * hd);
        let qh = q.slice_last(a, b)?;
        let kh = k.slice_last(a, b)?;
        let vh = v.slice_last(a, b)?;
        let w = qh.matmul(kh.transpose()?)?.scale(scale).softmax();
        heads.push(w.matmul(vh)?);
        weights.push(w);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        x.graph().concat(&heads)?
    };
    Ok((merged.matmul(get("wo")?)?.add(get("bo")?)?, weights))
}

fn affine_norm<'g>(p: &Binder<'g, '_>, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
    x.layer_norm(LN_EPS)
        .mul(p.get(&format!("{prefix}g"))?)?
        .add(p.get(&format!("{prefix}b"))?)
}

/// One post-norm encoder block.
pub fn encoder_block<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: AttentionShape,
    x: Var<'g>,
) -> Result<Var<'g>> {
    let (attn, _) = self_attention(p, prefix, s, x)?;
    let u = affine_norm(p, &format!("{prefix}ln1."), attn.add(x)?)?;
    let get = |n: &str| p.get(&format!("{prefix}{n}"));
    let ff = u
        .matmul(get("ff1.w")?)?
        .add(get("ff1.b")?)?
        .relu()
        .matmul(get("ff2.w")?)?
        .add(get("ff2.b")?)?;
    affine_norm(p, &format!("{prefix}ln2."), ff.add(u)?)
}

/// Prepends the summary token to `[B, H]` tokens and runs every encoder
/// block. Output is `[B, 1 + len, H]` with the summary token at position 0.
pub fn encode_sequence<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: AttentionShape,
    tokens: &[Var<'g>],
) -> Result<Var<'g>> {
    let first = tokens
        .first()
        .ok_or_else(|| Error::InvalidArgument("attention over an empty sequence".into()))?;
    let g = first.graph();
    let b = first.shape()[0];
    let cls = g
        .constant(Array::zeros(&[b, s.hidden]))
        .add(p.get(&format!("{prefix}cls"))?)?;
    let mut seq = Vec::with_capacity(tokens.len() + 1);
    seq.push(cls);
    seq.extend_from_slice(tokens);
    let mut x = g.stack(&seq)?;
    for e in 0..s.depth {
        x = encoder_block(p, &format!("{prefix}enc{e}."), s, x)?;
    }
    Ok(x)
}

/// Transformed summary token of a hidden-state sequence: the initial hidden
/// state handed to the next layer.
pub fn attention_block<'g>(
    p: &Binder<'g, '_>,
    prefix: &str,
    s: AttentionShape,
    tokens: &[Var<'g>],
) -> Result<Var<'g>> {
    encode_sequence(p, prefix, s, tokens)?.select(0)
}
