//! Masked multi-head attention, the position-wise feed-forward network and
//! the pre-norm residual sublayers built from them.
//!
//! Batches are ragged: the rows of every stream tensor are the concatenation
//! of several sequences, described by a list of [`Segment`]s. Position-wise
//! work runs once over all rows; attention runs per segment and per head.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Graph, RngStream, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Rows `start..start + len` of a stream tensor form one sequence, of which
/// the first `pad` rows are left padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub pad: usize,
}

impl Segment {
    /// Back-to-back unpadded segments of the given lengths.
    pub fn packed(lengths: &[usize]) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .iter()
            .map(|&len| {
                let s = Segment { start, len, pad: 0 };
                start += len;
                s
            })
            .collect()
    }

    pub fn total_rows(segments: &[Segment]) -> usize {
        segments.iter().map(|s| s.start + s.len).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Query `i` sees keys `j <= i`.
    Causal,
    None,
}

/// `[n × n]` row-major flags, `true` where key `j` is hidden from query `i`
/// (the strict upper triangle).
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|idx| idx % n > idx / n).collect()
}

/// Causal or open mask with the first `pad` keys hidden from every query.
pub fn attention_mask(n: usize, kind: MaskKind, pad: usize) -> Vec<bool> {
    let mut m = match kind {
        MaskKind::Causal => causal_mask(n),
        MaskKind::None => vec![false; n * n],
    };
    for i in 0..n {
        for j in 0..pad.min(n) {
            m[i * n + j] = true;
        }
    }
    m
}

/// Projections of one multi-head attention block. Head `i` uses column block
/// `i·d .. (i+1)·d` of the query, key and value matrices, and row block
/// `i·d .. (i+1)·d` of the output matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Validation(format!(
                "{heads} heads do not divide d_model {d_model}"
            )));
        }
        let d = d_model / heads;
        let mut per_head = |store: &mut ParamStore, name: &str| -> Result<ParamId> {
            let mut w = Tensor::zeros(&[d_model, d_model]);
            for h in 0..heads {
                let block = xavier_uniform(d_model, d, rng)?;
                for r in 0..d_model {
                    w.row_slice_mut(r)[h * d..(h + 1) * d].copy_from_slice(block.row_slice(r));
                }
            }
            store.add(format!("{prefix}.{name}"), w)
        };
        let w_q = per_head(store, "w_q")?;
        let w_k = per_head(store, "w_k")?;
        let w_v = per_head(store, "w_v")?;
        let w_o = store.add(format!("{prefix}.w_o"), xavier_uniform(d_model, d_model, rng)?)?;
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
        })
    }

    pub fn scalar_count(d_model: usize) -> usize {
        4 * d_model * d_model
    }

    pub fn vars(&self, bound: &Bound) -> AttentionVars {
        AttentionVars {
            w_q: bound.var(self.w_q),
            w_k: bound.var(self.w_k),
            w_v: bound.var(self.w_v),
            w_o: bound.var(self.w_o),
            heads: self.heads,
        }
    }
}

/// [`AttentionParams`] resolved to graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(FfnParams {
            w1: store.add(format!("{prefix}.w1"), xavier_uniform(d_model, d_ff, rng)?)?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[1, d_ff]))?,
            w2: store.add(format!("{prefix}.w2"), xavier_uniform(d_ff, d_model, rng)?)?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[1, d_model]))?,
        })
    }

    pub fn scalar_count(d_model: usize, d_ff: usize) -> usize {
        2 * d_model * d_ff + d_ff + d_model
    }

    pub fn vars(&self, bound: &Bound) -> FfnVars {
        FfnVars {
            w1: bound.var(self.w1),
            b1: bound.var(self.b1),
            w2: bound.var(self.w2),
            b2: bound.var(self.b2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d_model: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::filled(&[1, d_model], 1.0))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[1, d_model]))?,
        })
    }

    pub fn scalar_count(d_model: usize) -> usize {
        2 * d_model
    }

    pub fn vars(&self, bound: &Bound) -> LayerNormVars {
        LayerNormVars {
            gamma: bound.var(self.gamma),
            beta: bound.var(self.beta),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Per-forward settings shared by every sublayer.
#[derive(Clone, Debug)]
pub struct ForwardContext {
    pub train: bool,
    pub dropout: f64,
    /// Also drop attention weights (off unless set).
    pub attention_dropout: bool,
    pub rng: RngStream,
}

impl ForwardContext {
    pub fn eval() -> Self {
        ForwardContext {
            train: false,
            dropout: 0.0,
            attention_dropout: false,
            rng: RngStream::new(0),
        }
    }

    pub fn train(dropout: f64, rng: RngStream) -> Self {
        ForwardContext {
            train: true,
            dropout,
            attention_dropout: false,
            rng,
        }
    }

    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        g.dropout(x, self.dropout, &mut self.rng, self.train)
    }
}

/// Result of one attention block. `scores[s][h]` is the scaled, unmasked
/// score matrix and `weights[s][h]` the attention weights of head `h` on
/// segment `s`.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub scores: Vec<Vec<Var>>,
    pub weights: Vec<Vec<Var>>,
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
/// Both inputs share the same segment layout.
pub fn masked_attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    p: &AttentionVars,
    segments: &[Segment],
    mask: MaskKind,
    ctx: &mut ForwardContext,
) -> Result<AttentionOutput> {
    let (dq, dk) = (g.value(queries).cols(), g.value(keys_values).cols());
    let d_model = g.value(p.w_q).cols();
    if dq != g.value(p.w_q).rows() || dk != g.value(p.w_k).rows() || dk != g.value(p.w_v).rows() {
        return Err(Error::shape("masked_attention", g.shape(queries), g.shape(p.w_q)));
    }
    let rows = g.value(queries).rows();
    if g.value(keys_values).rows() != rows || Segment::total_rows(segments) > rows {
        return Err(Error::shape("masked_attention", g.shape(queries), g.shape(keys_values)));
    }
    let heads = p.heads;
    if heads == 0 || d_model % heads != 0 {
        return Err(Error::Validation(format!("{heads} heads do not divide {d_model}")));
    }
    let d = d_model / heads;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let q = g.matmul(queries, p.w_q)?;
    let k = g.matmul(keys_values, p.w_k)?;
    let v = g.matmul(keys_values, p.w_v)?;

    let mut masks: HashMap<(usize, usize), Rc<[bool]>> = HashMap::new();
    let mut parts = Vec::with_capacity(segments.len() * heads);
    let mut all_scores = Vec::with_capacity(segments.len());
    let mut all_weights = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.len == 0 || seg.pad >= seg.len {
            return Err(Error::Validation(format!(
                "segment of length {} with {} padding rows",
                seg.len, seg.pad
            )));
        }
        let blocked = masks
            .entry((seg.len, seg.pad))
            .or_insert_with(|| attention_mask(seg.len, mask, seg.pad).into())
            .clone();
        let mut seg_scores = Vec::with_capacity(heads);
        let mut seg_weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.block(q, seg.start, seg.len, h * d, d)?;
            let kh = g.block(k, seg.start, seg.len, h * d, d)?;
            let vh = g.block(v, seg.start, seg.len, h * d, d)?;
            let raw = g.matmul_nt(qh, kh)?;
            let scores = g.scale(raw, inv_sqrt_d)?;
            let masked = g.mask_fill(scores, blocked.clone())?;
            let weights = g.softmax(masked, 1)?;
            let used = if ctx.attention_dropout {
                ctx.dropout(g, weights)?
            } else {
                weights
            };
            let head = g.matmul(used, vh)?;
            parts.push((head, seg.start, h * d));
            seg_scores.push(scores);
            seg_weights.push(weights);
        }
        all_scores.push(seg_scores);
        all_weights.push(seg_weights);
    }
    let concat = g.assemble(rows, d_model, parts)?;
    let output = g.matmul(concat, p.w_o)?;
    Ok(AttentionOutput {
        output,
        scores: all_scores,
        weights: all_weights,
    })
}

/// `ReLU(x W1 + b1) W2 + b2`, row by row.
pub fn ffn(g: &mut Graph, x: Var, p: &FfnVars) -> Result<Var> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add_row(h, p.b1)?;
    let h = g.relu(h)?;
    let y = g.matmul(h, p.w2)?;
    g.add_row(y, p.b2)
}

pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNormVars) -> Result<Var> {
    g.layer_norm(x, p.gamma, p.beta, LAYER_NORM_EPS)
}

/// `x + Dropout(Attention(LN(x), LN(x)))`.
#[allow(clippy::too_many_arguments)]
pub fn self_attention_sublayer(
    g: &mut Graph,
    x: Var,
    ln: &LayerNormVars,
    attn: &AttentionVars,
    segments: &[Segment],
    mask: MaskKind,
    ctx: &mut ForwardContext,
) -> Result<(Var, AttentionOutput)> {
    let n = layer_norm(g, x, ln)?;
    let a = masked_attention(g, n, n, attn, segments, mask, ctx)?;
    let dropped = ctx.dropout(g, a.output)?;
    Ok((g.add(x, dropped)?, a))
}

/// `x + Dropout(Attention(LN(x), memory))`. Only the query stream is
/// normalised; `memory` is used as given.
#[allow(clippy::too_many_arguments)]
pub fn cross_attention_sublayer(
    g: &mut Graph,
    x: Var,
    memory: Var,
    ln: &LayerNormVars,
    attn: &AttentionVars,
    segments: &[Segment],
    mask: MaskKind,
    ctx: &mut ForwardContext,
) -> Result<(Var, AttentionOutput)> {
    let n = layer_norm(g, x, ln)?;
    let a = masked_attention(g, n, memory, attn, segments, mask, ctx)?;
    let dropped = ctx.dropout(g, a.output)?;
    Ok((g.add(x, dropped)?, a))
}

/// `x + Dropout(FFN(LN(x)))`.
pub fn ffn_sublayer(
    g: &mut Graph,
    x: Var,
    ln: &LayerNormVars,
    p: &FfnVars,
    ctx: &mut ForwardContext,
) -> Result<Var> {
    let n = layer_norm(g, x, ln)?;
    let f = ffn(g, n, p)?;
    let dropped = ctx.dropout(g, f)?;
    g.add(x, dropped)
}
