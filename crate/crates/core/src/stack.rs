//! Multilayer model: every layer is a bidirectional imputation cell over the
//! raw inputs; layer `l > 1` starts each direction from the attention summary
//! of layer `l - 1`'s hidden states in that direction.
//!
//! Parameter namespaces: `l{l}.fwd.*` and `l{l}.bwd.*` for the cells,
//! `l{l}.attn.fwd.*` and `l{l}.attn.bwd.*` for the initialization encoders
//! (layers 2 and up).

use std::fmt::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attention_block, encoder_param_count, init_attention_params, AttentionShape,
};
use crate::binder::Binder;
use crate::brits::{bidirectional, cell_param_count, init_cell_params, BidirectionalRun, CellShape};
use crate::data::{Direction, SeriesBatch};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    pub cell: CellShape,
    pub attention: AttentionShape,
    pub consistency_weight: f64,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.attention.hidden != self.cell.hidden {
            return Err(Error::Config(
                "attention width must equal the recurrent hidden size".into(),
            ));
        }
        if self.layers > 1 {
            self.attention.validate()?;
        }
        Ok(())
    }
}

pub fn layer_prefix(layer: usize) -> String {
    format!("l{layer}.")
}

pub fn attention_prefix(layer: usize, direction: Direction) -> String {
    format!("l{layer}.attn.{}.", direction.tag())
}

pub fn init_stack_params(store: &mut ParamStore, cfg: &StackConfig, rng: &mut impl Rng) {
    for l in 1..=cfg.layers {
        for dir in [Direction::Forward, Direction::Backward] {
            init_cell_params(store, &format!("l{l}.{}.", dir.tag()), cfg.cell, rng);
        }
        if l > 1 {
            for dir in [Direction::Forward, Direction::Backward] {
                init_attention_params(store, &attention_prefix(l, dir), cfg.attention, rng);
            }
        }
    }
}

pub struct StackOutput<'g> {
    /// One bidirectional run per layer, shallowest first.
    pub layers: Vec<BidirectionalRun<'g>>,
    /// Mean of the layer losses.
    pub loss: Var<'g>,
}

impl<'g> StackOutput<'g> {
    /// Deepest layer's combined imputation, forward time order.
    pub fn imputation(&self) -> &[Var<'g>] {
        &self.layers.last().expect("at least one layer").imputation
    }

    pub fn layer_losses(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.loss.item()).collect()
    }
}

pub fn stack_forward<'g>(
    p: &Binder<'g, '_>,
    cfg: &StackConfig,
    batch: &SeriesBatch,
) -> Result<StackOutput<'g>> {
    cfg.validate()?;
    let mut layers: Vec<BidirectionalRun<'g>> = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let h0 = match layers.last() {
            None => (None, None),
            Some(prev) => (
                Some(attention_block(
                    p,
                    &attention_prefix(l, Direction::Forward),
                    cfg.attention,
                    &prev.fwd.hidden,
                )?),
                Some(attention_block(
                    p,
                    &attention_prefix(l, Direction::Backward),
                    cfg.attention,
                    &prev.bwd.hidden,
                )?),
            ),
        };
        layers.push(bidirectional(
            p,
            &layer_prefix(l),
            cfg.cell,
            batch,
            h0,
            cfg.consistency_weight,
        )?);
    }
    let mut total = layers[0].loss;
    for run in &layers[1..] {
        total = total.add(run.loss)?;
    }
    let loss = total.scale(1.0 / layers.len() as f64);
    Ok(StackOutput { layers, loss })
}

/// Scalar parameter counts of a stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub layers: usize,
    /// One direction's recurrent imputation cell.
    pub backbone_per_direction: usize,
    /// One encoder block.
    pub encoder: usize,
    /// Encoder blocks per attention-initialized layer (both directions).
    pub encoders_per_layer: usize,
    /// Learnable summary tokens per attention-initialized layer.
    pub cls_per_layer: usize,
    /// Added by each layer beyond the first.
    pub per_layer_delta: usize,
    pub total: usize,
}

pub fn parameter_count(cfg: &StackConfig) -> ParamCount {
    let backbone = cell_param_count(cfg.cell);
    let encoder = encoder_param_count(cfg.attention);
    let encoders_per_layer = 2 * cfg.attention.depth;
    let cls_per_layer = 2 * cfg.attention.hidden;
    let delta = 2 * backbone + encoders_per_layer * encoder + cls_per_layer;
    ParamCount {
        layers: cfg.layers,
        backbone_per_direction: backbone,
        encoder,
        encoders_per_layer,
        cls_per_layer,
        per_layer_delta: delta,
        total: 2 * backbone + cfg.layers.saturating_sub(1) * delta,
    }
}

/// Renders `n_b×backbone + n_e×encoder = total` with thousands separators.
pub fn format_identity(backbone: usize, n_backbone: usize, encoder: usize, n_encoder: usize) -> String {
    let total = n_backbone * backbone + n_encoder * encoder;
    format!(
        "{n_backbone}×{} + {n_encoder}×{} = {}",
        thousands(backbone),
        thousands(encoder),
        thousands(total)
    )
}

pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl ParamCount {
    /// Human-readable report, one component per line.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "layers                 {}", self.layers);
        let _ = writeln!(s, "backbone / direction   {}", thousands(self.backbone_per_direction));
        let _ = writeln!(s, "encoder block          {}", thousands(self.encoder));
        let _ = writeln!(s, "encoders / layer       {}", self.encoders_per_layer);
        let _ = writeln!(s, "summary tokens / layer {}", thousands(self.cls_per_layer));
        let _ = writeln!(
            s,
            "per-layer delta        {} (+{} summary tokens)",
            format_identity(self.backbone_per_direction, 2, self.encoder, self.encoders_per_layer),
            thousands(self.cls_per_layer)
        );
        let _ = writeln!(s, "total                  {}", thousands(self.total));
        s
    }
}
