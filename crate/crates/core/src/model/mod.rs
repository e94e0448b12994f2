//! The four encoder/decoder arrangements and their shared plumbing.
//!
//! | tag   | encoder stream                 | decoder stream              |
//! |-------|--------------------------------|-----------------------------|
//! | SAINT | exercises                      | start token + responses     |
//! | UTMTI | start token + interactions     | exercises                   |
//! | LTMTI | start token + interactions, most recent first | target exercise repeated |
//! | SSAKT | exercises (self-attention)     | start token + interactions, attended by the exercise stream |
//!
//! Every attention layer uses the causal mask. Predictions are
//! `sigmoid(h · w + b)` for each decoder row.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::attention::{
    cross_attention_sublayer, ffn_sublayer, self_attention_sublayer, AttentionOutput, AttentionParams,
    FfnParams, ForwardContext, LayerNormParams, MaskKind, Segment,
};
use crate::embeddings::{EmbeddingDetail, EmbeddingSizes, EmbeddingTables, SlotRows};
use crate::error::{Error, Result};
use crate::interaction::{ExerciseInfo, Interaction};
use crate::numerics::{xavier_uniform, Graph, RngStream, Tensor, Var};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "SAINT")]
    Saint,
    #[serde(rename = "LTMTI")]
    Ltmti,
    #[serde(rename = "UTMTI")]
    Utmti,
    #[serde(rename = "SSAKT")]
    Ssakt,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Saint,
        Architecture::Ltmti,
        Architecture::Utmti,
        Architecture::Ssakt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Saint => "SAINT",
            Architecture::Ltmti => "LTMTI",
            Architecture::Utmti => "UTMTI",
            Architecture::Ssakt => "SSAKT",
        }
    }

    /// Whether one forward pass predicts every position of a window, as
    /// opposed to several candidates for the last position only.
    pub fn predicts_every_position(self) -> bool {
        self != Architecture::Ltmti
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown architecture {s:?}")))
    }
}

/// Hyperparameters and vocabulary sizes that fix the parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub window: usize,
    pub dropout: f64,
    pub attention_dropout: bool,
    pub detail: EmbeddingDetail,
    pub num_exercises: usize,
    pub num_categories: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Validation(format!(
                "heads {} must divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn embedding_sizes(&self) -> EmbeddingSizes {
        EmbeddingSizes {
            num_exercises: self.num_exercises,
            num_categories: self.num_categories,
            window: self.window,
            d_model: self.d_model,
            detail: self.detail,
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let attn = AttentionParams::scalar_count(d);
        let ln = LayerNormParams::scalar_count(d);
        let ffn = FfnParams::scalar_count(d, f);
        let encoder_layer = attn + ffn + 2 * ln;
        let decoder_layer = match self.architecture {
            Architecture::Saint | Architecture::Utmti => 2 * attn + ffn + 3 * ln,
            Architecture::Ltmti | Architecture::Ssakt => attn + ffn + 2 * ln,
        };
        EmbeddingTables::scalar_count(&self.embedding_sizes())
            + self.layers * (encoder_layer + decoder_layer)
            + d
            + 1
    }
}

/// Self-attention then feed-forward.
#[derive(Clone, Debug, PartialEq)]
struct EncoderLayer {
    ln_attn: LayerNormParams,
    attn: AttentionParams,
    ln_ffn: LayerNormParams,
    ffn: FfnParams,
}

/// Optional self-attention, then attention over a memory stream, then
/// feed-forward.
#[derive(Clone, Debug, PartialEq)]
struct DecoderLayer {
    self_attn: Option<(LayerNormParams, AttentionParams)>,
    ln_cross: LayerNormParams,
    cross: AttentionParams,
    ln_ffn: LayerNormParams,
    ffn: FfnParams,
}

/// Which attention a recorded weight set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionStream {
    EncoderSelf,
    DecoderSelf,
    Cross,
}

impl AttentionStream {
    pub fn name(self) -> &'static str {
        match self {
            AttentionStream::EncoderSelf => "encoder_self",
            AttentionStream::DecoderSelf => "decoder_self",
            AttentionStream::Cross => "cross",
        }
    }
}

/// Attention weights of one block, `weights[segment][head]`.
#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub layer: usize,
    pub stream: AttentionStream,
    pub weights: Vec<Vec<Var>>,
}

/// One sequence of a batch. `interactions` are the real items, oldest first;
/// the last one is the final target, whose response is never read as input.
/// `pad` rows of left padding are prepended to every stream.
#[derive(Clone, Copy, Debug)]
pub struct SeqInput<'a> {
    pub interactions: &'a [Interaction],
    pub pad: usize,
}

impl<'a> SeqInput<'a> {
    pub fn new(interactions: &'a [Interaction]) -> Self {
        SeqInput { interactions, pad: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[rows × 1]` probabilities, one row per slot of every sequence.
    pub probs: Var,
    pub segments: Vec<Segment>,
    pub trace: Vec<TraceEntry>,
}

impl ForwardOutput {
    /// Row of the probability for the final interaction of sequence `s`.
    pub fn last_row(&self, s: usize) -> usize {
        let seg = self.segments[s];
        seg.start + seg.len - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    tables: EmbeddingTables,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    pred_w: ParamId,
    pred_b: ParamId,
}

impl Model {
    /// Registers and initialises every parameter: Xavier-uniform weights,
    /// zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (d, h, f) = (config.d_model, config.heads, config.d_ff);
        let tables = EmbeddingTables::register(&mut store, config.embedding_sizes(), rng)?;
        let mut encoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.{l}");
            encoder.push(EncoderLayer {
                ln_attn: LayerNormParams::register(&mut store, &format!("{p}.ln_attn"), d)?,
                attn: AttentionParams::register(&mut store, &format!("{p}.attn"), d, h, rng)?,
                ln_ffn: LayerNormParams::register(&mut store, &format!("{p}.ln_ffn"), d)?,
                ffn: FfnParams::register(&mut store, &format!("{p}.ffn"), d, f, rng)?,
            });
        }
        let with_self = matches!(config.architecture, Architecture::Saint | Architecture::Utmti);
        let mut decoder = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("decoder.{l}");
            let self_attn = if with_self {
                Some((
                    LayerNormParams::register(&mut store, &format!("{p}.ln_self"), d)?,
                    AttentionParams::register(&mut store, &format!("{p}.self_attn"), d, h, rng)?,
                ))
            } else {
                None
            };
            decoder.push(DecoderLayer {
                self_attn,
                ln_cross: LayerNormParams::register(&mut store, &format!("{p}.ln_cross"), d)?,
                cross: AttentionParams::register(&mut store, &format!("{p}.cross_attn"), d, h, rng)?,
                ln_ffn: LayerNormParams::register(&mut store, &format!("{p}.ln_ffn"), d)?,
                ffn: FfnParams::register(&mut store, &format!("{p}.ffn"), d, f, rng)?,
            });
        }
        let pred_w = store.add("prediction.w", xavier_uniform(d, 1, rng)?)?;
        let pred_b = store.add("prediction.b", Tensor::zeros(&[1, 1]))?;
        Ok(Model {
            config,
            store,
            tables,
            encoder,
            decoder,
            pred_w,
            pred_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn tables(&self) -> &EmbeddingTables {
        &self.tables
    }

    /// Encoder and decoder input slots of one sequence, padding included.
    fn stream_slots(&self, seq: &SeqInput) -> Result<(Vec<SlotRows>, Vec<SlotRows>)> {
        let w = seq.interactions;
        let t = &self.tables;
        let (enc, dec) = match self.config.architecture {
            Architecture::Saint => (t.exercise_stream(w)?, t.response_stream(w)?),
            Architecture::Utmti => (t.interaction_stream(w)?, t.exercise_stream(w)?),
            Architecture::Ltmti => (t.reversed_interaction_stream(w)?, t.constant_query_stream(w)?),
            Architecture::Ssakt => (t.exercise_stream(w)?, t.interaction_stream(w)?),
        };
        if seq.pad + w.len() > self.config.window {
            return Err(Error::Window {
                len: seq.pad + w.len(),
                window: self.config.window,
            });
        }
        let pad = vec![SlotRows::default(); seq.pad];
        let prefix = |s: Vec<SlotRows>| pad.iter().copied().chain(s).collect::<Vec<_>>();
        Ok((prefix(enc), prefix(dec)))
    }

    /// Batched forward pass. `bound` must hold this model's parameters in
    /// store order.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        batch: &[SeqInput],
        ctx: &mut ForwardContext,
    ) -> Result<ForwardOutput> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let mut enc_slots = Vec::new();
        let mut dec_slots = Vec::new();
        let mut segments = Vec::with_capacity(batch.len());
        for seq in batch {
            let (e, d) = self.stream_slots(seq)?;
            segments.push(Segment {
                start: enc_slots.len(),
                len: e.len(),
                pad: seq.pad,
            });
            enc_slots.extend(e);
            dec_slots.extend(d);
        }
        let enc_in = self.tables.render_graph(g, bound, &enc_slots)?;
        let dec_in = self.tables.render_graph(g, bound, &dec_slots)?;
        let mut x = ctx.dropout(g, enc_in)?;
        let mut y = ctx.dropout(g, dec_in)?;
        let mut trace = Vec::new();
        let mask = MaskKind::Causal;
        let record = |trace: &mut Vec<TraceEntry>, layer, stream, a: AttentionOutput| {
            trace.push(TraceEntry {
                layer,
                stream,
                weights: a.weights,
            })
        };

        let encode = |g: &mut Graph, x: Var, l: usize, ctx: &mut ForwardContext, trace: &mut Vec<TraceEntry>| {
            let layer = &self.encoder[l];
            let (x, a) = self_attention_sublayer(
                g,
                x,
                &layer.ln_attn.vars(bound),
                &layer.attn.vars(bound),
                &segments,
                mask,
                ctx,
            )?;
            record(trace, l, AttentionStream::EncoderSelf, a);
            ffn_sublayer(g, x, &layer.ln_ffn.vars(bound), &layer.ffn.vars(bound), ctx)
        };
        let decode = |g: &mut Graph,
                      y: Var,
                      memory: Var,
                      l: usize,
                      ctx: &mut ForwardContext,
                      trace: &mut Vec<TraceEntry>| {
            let layer = &self.decoder[l];
            let mut y = y;
            if let Some((ln, attn)) = &layer.self_attn {
                let (out, a) =
                    self_attention_sublayer(g, y, &ln.vars(bound), &attn.vars(bound), &segments, mask, ctx)?;
                record(trace, l, AttentionStream::DecoderSelf, a);
                y = out;
            }
            let (y, a) = cross_attention_sublayer(
                g,
                y,
                memory,
                &layer.ln_cross.vars(bound),
                &layer.cross.vars(bound),
                &segments,
                mask,
                ctx,
            )?;
            record(trace, l, AttentionStream::Cross, a);
            ffn_sublayer(g, y, &layer.ln_ffn.vars(bound), &layer.ffn.vars(bound), ctx)
        };

        let out = match self.config.architecture {
            Architecture::Saint | Architecture::Utmti | Architecture::Ltmti => {
                for l in 0..self.config.layers {
                    x = encode(g, x, l, ctx, &mut trace)?;
                }
                for l in 0..self.config.layers {
                    y = decode(g, y, x, l, ctx, &mut trace)?;
                }
                y
            }
            Architecture::Ssakt => {
                // The exercise stream queries the interaction stream of the
                // previous depth; both advance one block per layer.
                for l in 0..self.config.layers {
                    x = encode(g, x, l, ctx, &mut trace)?;
                    y = decode(g, x, y, l, ctx, &mut trace)?;
                }
                y
            }
        };
        let logits = g.matmul(out, bound.var(self.pred_w))?;
        let logits = g.add_row(logits, bound.var(self.pred_b))?;
        let probs = g.sigmoid(logits)?;
        Ok(ForwardOutput { probs, segments, trace })
    }

    /// Eval-mode probabilities for every slot of `seq`.
    pub fn predict_sequence(&self, seq: SeqInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.store.bind_frozen(&mut g);
        let out = self.forward(&mut g, &bound, &[seq], &mut ForwardContext::eval())?;
        Ok(g.value(out.probs).data().to_vec())
    }

    /// Probability that `target` is answered correctly after `history`. Only
    /// the most recent `window - 1` interactions are used.
    pub fn predict_next(&self, history: &[Interaction], target: &ExerciseInfo) -> Result<f64> {
        if self.store.is_empty() {
            return Err(Error::State("model has no parameters".into()));
        }
        let keep = self.config.window - 1;
        let recent = &history[history.len().saturating_sub(keep)..];
        let mut window = recent.to_vec();
        window.push(Interaction::query(*target));
        let probs = self.predict_sequence(SeqInput::new(&window))?;
        Ok(probs[probs.len() - 1])
    }

    /// Number of attention blocks per layer that an export records.
    pub fn attention_blocks_per_layer(&self) -> usize {
        match self.config.architecture {
            Architecture::Saint | Architecture::Utmti => 3,
            Architecture::Ltmti | Architecture::Ssakt => 2,
        }
    }
}
