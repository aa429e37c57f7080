//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node holding
//! its forward value and the indices of its inputs, so node order is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Binary elementwise ops broadcast when one operand's shape is a suffix of
//! the other's (a bias `[H]` against activations `[B, H]`, or a scalar `[]`
//! against anything).

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::array::{gemm, Array};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Exp,
    Neg,
    Relu,
    Sigmoid,
    Tanh,
    Log,
    Softplus,
    Abs,
    Square,
    Sqrt,
    Scale(f64),
    Shift(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize, end: usize },
    Stack(Vec<usize>),
    Select { src: usize, index: usize },
    Reshape(usize),
    Unary(usize, Unary),
    Softmax(usize),
    LayerNorm { src: usize, inv_std: Vec<f64> },
    L2Normalize { src: usize, norms: Vec<f64> },
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    MeanAxis1(usize),
    MaskedLog1pSumExp { src: usize, mask: Array },
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, usize>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Anonymous differentiable input.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Named differentiable input. Repeated calls with the same name return
    /// the same node.
    pub fn param(&self, name: &str, value: &Array) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { id, graph: self };
        }
        let v = self.leaf(value.clone());
        self.params.borrow_mut().insert(name.to_string(), v.id);
        v
    }

    /// Previously registered named parameter.
    pub fn get_param(&self, name: &str) -> Option<Var<'_>> {
        self.params
            .borrow()
            .get(name)
            .map(|&id| Var { id, graph: self })
    }

    pub fn concat(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[*ids.first().ok_or_else(|| {
                Error::InvalidArgument("concat of zero operands".into())
            })?]
            .value
            .shape()
            .to_vec();
            let lead = &first[..first.len().saturating_sub(1)];
            let widths: Vec<usize> = ids
                .iter()
                .map(|&i| {
                    let s = nodes[i].value.shape();
                    if s.is_empty() || &s[..s.len() - 1] != lead {
                        let shapes: Vec<&[usize]> =
                            ids.iter().map(|&j| nodes[j].value.shape()).collect();
                        return Err(Error::shape("concat", &shapes));
                    }
                    Ok(s[s.len() - 1])
                })
                .collect::<Result<_>>()?;
            let total: usize = widths.iter().sum();
            let rows: usize = lead.iter().product();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (&i, &w) in ids.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[i].value.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Array::new(&shape, data)?
        };
        let ng = self.needs(&ids);
        Ok(self.push(value, Op::Concat(ids), ng))
    }

    /// Stacks `[B, F]` operands into `[B, S, F]`.
    pub fn stack(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let first = nodes[*ids.first().ok_or_else(|| {
                Error::InvalidArgument("stack of zero operands".into())
            })?]
            .value
            .shape()
            .to_vec();
            if first.len() != 2 || ids.iter().any(|&i| nodes[i].value.shape() != first) {
                let shapes: Vec<&[usize]> = ids.iter().map(|&j| nodes[j].value.shape()).collect();
                return Err(Error::shape("stack", &shapes));
            }
            let (b, f, s) = (first[0], first[1], ids.len());
            let mut data = vec![0.0; b * s * f];
            for (k, &i) in ids.iter().enumerate() {
                let src = nodes[i].value.data();
                for r in 0..b {
                    data[(r * s + k) * f..(r * s + k + 1) * f]
                        .copy_from_slice(&src[r * f..(r + 1) * f]);
                }
            }
            Array::new(&[b, s, f], data)?
        };
        let ng = self.needs(&ids);
        Ok(self.push(value, Op::Stack(ids), ng))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Array::full(rv.shape(), 1.0));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
    params: BTreeMap<String, usize>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Array {
        self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Array::zeros(&self.shapes[var.id]))
    }

    /// Gradients of every named parameter.
    pub fn by_name(&self) -> BTreeMap<String, Array> {
        self.params
            .iter()
            .map(|(name, &id)| {
                let g = self.grads[id]
                    .clone()
                    .unwrap_or_else(|| Array::zeros(&self.shapes[id]));
                (name.clone(), g)
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Array>], nodes: &[Node], id: usize, g: Array) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Folds a gradient of the broadcast output shape back onto an operand of
/// length `n` (whose shape is a suffix of the output's).
fn unbroadcast(g: Array, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    if g.len() == n {
        return g.reshaped(shape).expect("same length");
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Array::new(shape, out).expect("suffix shape")
}

fn backprop(nodes: &[Node], id: usize, g: &Array, grads: &mut [Option<Array>]) {
    let node = &nodes[id];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            for p in [a, b] {
                if nodes[p].needs_grad {
                    let s = nodes[p].value.shape();
                    accumulate(grads, nodes, p, unbroadcast(g.clone(), s));
                }
            }
        }
        &Op::Sub(a, b) => {
            if nodes[a].needs_grad {
                accumulate(grads, nodes, a, unbroadcast(g.clone(), nodes[a].value.shape()));
            }
            if nodes[b].needs_grad {
                let neg = g.map(|v| -v);
                accumulate(grads, nodes, b, unbroadcast(neg, nodes[b].value.shape()));
            }
        }
        &Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            if nodes[a].needs_grad {
                let d = Array::from_fn(g.shape(), |i| g.data()[i] * vb.data()[i % lb]);
                accumulate(grads, nodes, a, unbroadcast(d, va.shape()));
            }
            if nodes[b].needs_grad {
                let d = Array::from_fn(g.shape(), |i| g.data()[i] * va.data()[i % la]);
                accumulate(grads, nodes, b, unbroadcast(d, vb.shape()));
            }
        }
        &Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (sa, sb) = (va.shape(), vb.shape());
            if sb.len() == 2 {
                let (k, n) = (sb[0], sb[1]);
                let m = va.len() / k;
                if nodes[a].needs_grad {
                    let mut d = vec![0.0; m * k];
                    gemm(g.data(), false, vb.data(), true, m, n, k, &mut d, false);
                    accumulate(grads, nodes, a, Array::new(sa, d).expect("shape"));
                }
                if nodes[b].needs_grad {
                    let mut d = vec![0.0; k * n];
                    gemm(va.data(), true, g.data(), false, k, m, n, &mut d, false);
                    accumulate(grads, nodes, b, Array::new(sb, d).expect("shape"));
                }
            } else {
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if nodes[a].needs_grad {
                    let mut d = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            false,
                            &vb.data()[i * k * n..(i + 1) * k * n],
                            true,
                            m,
                            n,
                            k,
                            &mut d[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    accumulate(grads, nodes, a, Array::new(sa, d).expect("shape"));
                }
                if nodes[b].needs_grad {
                    let mut d = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm(
                            &va.data()[i * m * k..(i + 1) * m * k],
                            true,
                            &g.data()[i * m * n..(i + 1) * m * n],
                            false,
                            k,
                            m,
                            n,
                            &mut d[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    accumulate(grads, nodes, b, Array::new(sb, d).expect("shape"));
                }
            }
        }
        &Op::Transpose(a) => {
            accumulate(grads, nodes, a, transpose_last(g));
        }
        Op::Concat(ids) => {
            let total = g.last_dim();
            let rows = g.len() / total;
            let mut offset = 0;
            for &p in ids {
                let w = nodes[p].value.last_dim();
                if nodes[p].needs_grad {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    let d = Array::new(nodes[p].value.shape(), d).expect("shape");
                    accumulate(grads, nodes, p, d);
                }
                offset += w;
            }
        }
        &Op::Slice { src, start, end } => {
            let w = nodes[src].value.last_dim();
            let sw = end - start;
            let rows = g.len() / sw;
            let mut d = vec![0.0; rows * w];
            for r in 0..rows {
                d[r * w + start..r * w + end].copy_from_slice(&g.data()[r * sw..(r + 1) * sw]);
            }
            let d = Array::new(nodes[src].value.shape(), d).expect("shape");
            accumulate(grads, nodes, src, d);
        }
        Op::Stack(ids) => {
            let (b, s, f) = (y.shape()[0], y.shape()[1], y.shape()[2]);
            for (k, &p) in ids.iter().enumerate() {
                if !nodes[p].needs_grad {
                    continue;
                }
                let mut d = Vec::with_capacity(b * f);
                for r in 0..b {
                    d.extend_from_slice(&g.data()[(r * s + k) * f..(r * s + k + 1) * f]);
                }
                accumulate(grads, nodes, p, Array::new(&[b, f], d).expect("shape"));
            }
        }
        &Op::Select { src, index } => {
            let sh = nodes[src].value.shape();
            let (b, s, f) = (sh[0], sh[1], sh[2]);
            let mut d = vec![0.0; b * s * f];
            for r in 0..b {
                d[(r * s + index) * f..(r * s + index + 1) * f]
                    .copy_from_slice(&g.data()[r * f..(r + 1) * f]);
            }
            accumulate(grads, nodes, src, Array::new(sh, d).expect("shape"));
        }
        &Op::Reshape(a) => {
            let d = g.clone().reshaped(nodes[a].value.shape()).expect("shape");
            accumulate(grads, nodes, a, d);
        }
        &Op::Unary(a, op) => {
            let x = &nodes[a].value;
            let d = Array::from_fn(x.shape(), |i| {
                let (xi, yi, gi) = (x.data()[i], y.data()[i], g.data()[i]);
                gi * match op {
                    Unary::Exp => yi,
                    Unary::Neg => -1.0,
                    Unary::Relu => {
                        if xi > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Sigmoid => yi * (1.0 - yi),
                    Unary::Tanh => 1.0 - yi * yi,
                    Unary::Log => 1.0 / xi,
                    Unary::Softplus => sigmoid(xi),
                    Unary::Abs => {
                        if xi > 0.0 {
                            1.0
                        } else if xi < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Square => 2.0 * xi,
                    Unary::Sqrt => 0.5 / yi,
                    Unary::Scale(c) => c,
                    Unary::Shift(_) => 1.0,
                }
            });
            accumulate(grads, nodes, a, d);
        }
        &Op::Softmax(a) => {
            let f = y.last_dim();
            let mut d = vec![0.0; y.len()];
            for r in 0..y.len() / f {
                let ys = &y.data()[r * f..(r + 1) * f];
                let gs = &g.data()[r * f..(r + 1) * f];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..f {
                    d[r * f + j] = ys[j] * (gs[j] - dot);
                }
            }
            accumulate(grads, nodes, a, Array::new(y.shape(), d).expect("shape"));
        }
        Op::LayerNorm { src, inv_std } => {
            let f = y.last_dim();
            let mut d = vec![0.0; y.len()];
            for (r, &is) in inv_std.iter().enumerate() {
                let ys = &y.data()[r * f..(r + 1) * f];
                let gs = &g.data()[r * f..(r + 1) * f];
                let mg = gs.iter().sum::<f64>() / f as f64;
                let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / f as f64;
                for j in 0..f {
                    d[r * f + j] = is * (gs[j] - mg - ys[j] * mgy);
                }
            }
            accumulate(grads, nodes, *src, Array::new(y.shape(), d).expect("shape"));
        }
        Op::L2Normalize { src, norms } => {
            let f = y.last_dim();
            let mut d = vec![0.0; y.len()];
            for (r, &n) in norms.iter().enumerate() {
                let ys = &y.data()[r * f..(r + 1) * f];
                let gs = &g.data()[r * f..(r + 1) * f];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..f {
                    d[r * f + j] = (gs[j] - ys[j] * dot) / n;
                }
            }
            accumulate(grads, nodes, *src, Array::new(y.shape(), d).expect("shape"));
        }
        &Op::Sum(a) => {
            let s = nodes[a].value.shape();
            accumulate(grads, nodes, a, Array::full(s, g.item()));
        }
        &Op::Mean(a) => {
            let v = &nodes[a].value;
            accumulate(grads, nodes, a, Array::full(v.shape(), g.item() / v.len() as f64));
        }
        &Op::SumLast(a) => {
            let v = &nodes[a].value;
            let f = v.last_dim();
            let d = Array::from_fn(v.shape(), |i| g.data()[i / f]);
            accumulate(grads, nodes, a, d);
        }
        &Op::MeanAxis1(a) => {
            let sh = nodes[a].value.shape();
            let (s, f) = (sh[1], sh[2]);
            let inv = 1.0 / s as f64;
            let d = Array::from_fn(sh, |i| {
                let r = i / (s * f);
                let j = i % f;
                g.data()[r * f + j] * inv
            });
            accumulate(grads, nodes, a, d);
        }
        Op::MaskedLog1pSumExp { src, mask } => {
            let x = &nodes[*src].value;
            let f = x.last_dim();
            let d = Array::from_fn(x.shape(), |i| {
                let r = i / f;
                if mask.data()[i] == 0.0 {
                    return 0.0;
                }
                g.data()[r] * mask.data()[i] * (x.data()[i] - y.data()[r]).exp()
            });
            accumulate(grads, nodes, *src, d);
        }
    }
}

fn transpose_last(a: &Array) -> Array {
    let sh = a.shape();
    let r = sh.len();
    let (m, n) = (sh[r - 2], sh[r - 1]);
    let batch = a.len() / (m * n);
    let mut out = vec![0.0; a.len()];
    for b in 0..batch {
        let base = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = a.data()[base + i * n + j];
            }
        }
    }
    let mut shape = sh.to_vec();
    shape.swap(r - 2, r - 1);
    Array::new(&shape, out).expect("shape")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Array {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Forward value of a one-element node.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    fn binary(
        self,
        other: Var<'g>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let out_shape = if is_suffix(b.shape(), a.shape()) {
                a.shape()
            } else if is_suffix(a.shape(), b.shape()) {
                b.shape()
            } else {
                return Err(Error::shape(op, &[a.shape(), b.shape()]));
            };
            let (la, lb) = (a.len(), b.len());
            Array::from_fn(out_shape, |i| f(a.data()[i % la], b.data()[i % lb]))
        };
        let ng = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, make(self.id, other.id), ng))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    /// Matrix product. `[.., m, k] x [k, n]` applies a shared right operand to
    /// every leading index; `[B, m, k] x [B, k, n]` is a batched product.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            let err = || Error::shape("matmul", &[sa, sb]);
            if sa.len() < 2 {
                return Err(err());
            }
            match sb.len() {
                2 => {
                    let (k, n) = (sb[0], sb[1]);
                    if sa[sa.len() - 1] != k {
                        return Err(err());
                    }
                    let m = a.len() / k;
                    let mut c = vec![0.0; m * n];
                    gemm(a.data(), false, b.data(), false, m, k, n, &mut c, false);
                    let mut shape = sa.to_vec();
                    *shape.last_mut().expect("rank >= 2") = n;
                    Array::new(&shape, c)?
                }
                3 => {
                    if sa.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                        return Err(err());
                    }
                    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                    let mut c = vec![0.0; bs * m * n];
                    for i in 0..bs {
                        gemm(
                            &a.data()[i * m * k..(i + 1) * m * k],
                            false,
                            &b.data()[i * k * n..(i + 1) * k * n],
                            false,
                            m,
                            k,
                            n,
                            &mut c[i * m * n..(i + 1) * m * n],
                            false,
                        );
                    }
                    Array::new(&[bs, m, n], c)?
                }
                _ => return Err(err()),
            }
        };
        let ng = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, Op::MatMul(self.id, other.id), ng))
    }

    /// Swaps the two trailing axes.
    pub fn transpose(self) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.shape().len() < 2 {
                return Err(Error::shape("transpose", &[a.shape()]));
            }
            transpose_last(a)
        };
        Ok(self.unary_node(value, Op::Transpose(self.id)))
    }

    /// `[.., start..end]` along the trailing axis.
    pub fn slice_last(self, start: usize, end: usize) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let w = a.last_dim();
            if a.shape().is_empty() || start >= end || end > w {
                return Err(Error::shape("slice", &[a.shape(), &[start, end]]));
            }
            let rows = a.len() / w;
            let mut d = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                d.extend_from_slice(&a.data()[r * w + start..r * w + end]);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().expect("non-empty") = end - start;
            Array::new(&shape, d)?
        };
        Ok(self.unary_node(
            value,
            Op::Slice {
                src: self.id,
                start,
                end,
            },
        ))
    }

    /// `[B, S, F] -> [B, F]` at position `index` of the middle axis.
    pub fn select(self, index: usize) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.shape().len() != 3 || index >= a.shape()[1] {
                return Err(Error::shape("select", &[a.shape(), &[index]]));
            }
            a.time_slice(index)
        };
        Ok(self.unary_node(
            value,
            Op::Select {
                src: self.id,
                index,
            },
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.clone().reshaped(shape)?
        };
        Ok(self.unary_node(value, Op::Reshape(self.id)))
    }

    fn unary_node(self, value: Array, op: Op) -> Var<'g> {
        let ng = self.graph.needs(&[self.id]);
        self.graph.push(value, op, ng)
    }

    fn unary(self, op: Unary) -> Var<'g> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.map(|x| match op {
                Unary::Exp => x.exp(),
                Unary::Neg => -x,
                Unary::Relu => x.max(0.0),
                Unary::Sigmoid => sigmoid(x),
                Unary::Tanh => x.tanh(),
                Unary::Log => x.ln(),
                Unary::Softplus => softplus(x),
                Unary::Abs => x.abs(),
                Unary::Square => x * x,
                Unary::Sqrt => x.sqrt(),
                Unary::Scale(c) => c * x,
                Unary::Shift(c) => x + c,
            })
        };
        self.unary_node(value, Op::Unary(self.id, op))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp)
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(Unary::Neg)
    }

    /// `max(0, x)`, with subgradient 0 at 0.
    pub fn relu(self) -> Var<'g> {
        self.unary(Unary::Relu)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh)
    }

    pub fn log(self) -> Var<'g> {
        self.unary(Unary::Log)
    }

    /// `log(1 + e^x)`.
    pub fn softplus(self) -> Var<'g> {
        self.unary(Unary::Softplus)
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(Unary::Abs)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(Unary::Square)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(Unary::Sqrt)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Unary::Scale(c))
    }

    pub fn shift(self, c: f64) -> Var<'g> {
        self.unary(Unary::Shift(c))
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Var<'g> {
        self.neg().shift(1.0)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(self) -> Var<'g> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let f = a.last_dim();
            let mut d = a.data().to_vec();
            for row in d.chunks_mut(f) {
                let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            Array::new(a.shape(), d).expect("shape")
        };
        self.unary_node(value, Op::Softmax(self.id))
    }

    /// Normalizes the trailing axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self, eps: f64) -> Var<'g> {
        let (value, inv_std) = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let f = a.last_dim();
            let mut d = a.data().to_vec();
            let mut inv_std = Vec::with_capacity(a.len() / f);
            for row in d.chunks_mut(f) {
                let mean = row.iter().sum::<f64>() / f as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
                let is = 1.0 / (var + eps).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * is;
                }
                inv_std.push(is);
            }
            (Array::new(a.shape(), d).expect("shape"), inv_std)
        };
        self.unary_node(
            value,
            Op::LayerNorm {
                src: self.id,
                inv_std,
            },
        )
    }

    /// Scales each trailing-axis row to unit Euclidean norm.
    pub fn l2_normalize(self) -> Var<'g> {
        let (value, norms) = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let f = a.last_dim();
            let mut d = a.data().to_vec();
            let mut norms = Vec::with_capacity(a.len() / f);
            for row in d.chunks_mut(f) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for v in row.iter_mut() {
                    *v /= n;
                }
                norms.push(n);
            }
            (Array::new(a.shape(), d).expect("shape"), norms)
        };
        self.unary_node(
            value,
            Op::L2Normalize {
                src: self.id,
                norms,
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'g> {
        let v = self.graph.nodes.borrow()[self.id].value.sum();
        self.unary_node(Array::scalar(v), Op::Sum(self.id))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Var<'g> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            a.sum() / a.len() as f64
        };
        self.unary_node(Array::scalar(v), Op::Mean(self.id))
    }

    /// Sum over the trailing axis.
    pub fn sum_last(self) -> Var<'g> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let f = a.last_dim();
            let d: Vec<f64> = a.data().chunks(f).map(|r| r.iter().sum()).collect();
            let sh = &a.shape()[..a.shape().len().saturating_sub(1)];
            Array::new(sh, d).expect("shape")
        };
        self.unary_node(value, Op::SumLast(self.id))
    }

    /// `[B, S, F] -> [B, F]`, averaging the middle axis.
    pub fn mean_axis1(self) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let sh = a.shape();
            if sh.len() != 3 || sh[1] == 0 {
                return Err(Error::shape("mean_axis1", &[sh]));
            }
            let (b, s, f) = (sh[0], sh[1], sh[2]);
            let mut d = vec![0.0; b * f];
            for r in 0..b {
                for k in 0..s {
                    for j in 0..f {
                        d[r * f + j] += a.data()[(r * s + k) * f + j];
                    }
                }
            }
            for v in &mut d {
                *v /= s as f64;
            }
            Array::new(&[b, f], d)?
        };
        Ok(self.unary_node(value, Op::MeanAxis1(self.id)))
    }

    /// Row-wise `log(1 + sum_j mask_j * exp(x_j))` over the trailing axis,
    /// evaluated with a max shift.
    pub fn masked_log1p_sum_exp(self, mask: &Array) -> Result<Var<'g>> {
        let value = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            if a.shape() != mask.shape() || a.shape().is_empty() {
                return Err(Error::shape("masked_log1p_sum_exp", &[a.shape(), mask.shape()]));
            }
            let f = a.last_dim();
            let d: Vec<f64> = a
                .data()
                .chunks(f)
                .zip(mask.data().chunks(f))
                .map(|(row, m)| {
                    let top = row
                        .iter()
                        .zip(m)
                        .filter(|(_, &mk)| mk != 0.0)
                        .fold(0.0_f64, |acc, (&v, _)| acc.max(v));
                    let s: f64 = row
                        .iter()
                        .zip(m)
                        .filter(|(_, &mk)| mk != 0.0)
                        .map(|(&v, &mk)| mk * (v - top).exp())
                        .sum();
                    top + ((-top).exp() + s).ln()
                })
                .collect();
            Array::new(&a.shape()[..a.shape().len() - 1], d)?
        };
        Ok(self.unary_node(
            value,
            Op::MaskedLog1pSumExp {
                src: self.id,
                mask: mask.clone(),
            },
        ))
    }
}
