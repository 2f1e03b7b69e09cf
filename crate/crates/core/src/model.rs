//! The tabular risk transformer: embedded feature tokens, a stack of
//! post-norm encoder layers with multi-head self-attention, global average
//! pooling over tokens, and a linear head producing one logit per sample.
//!
//! There is no positional encoding: tokens are identified by which embedder
//! produced them, so the encoder is permutation-equivariant and the pooled
//! logit permutation-invariant. Attention weights can be captured after the
//! softmax for the explainability exports.

use crate::data::{Batch, FeatureSchema};
use crate::embed::{
    embed_named, embed_named_mut, embed_tokens, linear_init, CategoricalEmbedderParams,
    CheckboxEmbedderParams, ContinuousEmbedderParams, EmbedVars,
};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Layer-norm stabilizer used throughout the encoder.
pub const LN_EPS: f64 = 1e-5;

/// How token representations collapse to one vector per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinalRepresentation {
    /// Global average pooling over the token axis.
    #[default]
    Gap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    /// Embedding and encoder width E.
    pub model_size: usize,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    /// FFN hidden width as a multiple of E.
    pub mlp_ratio: usize,
    pub final_representation: FinalRepresentation,
    /// Drop probability on sublayer outputs during training; 0 disables.
    pub dropout: f64,
    /// One continuous-feature MLP shared across features instead of one per
    /// feature.
    pub shared_continuous_mlp: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            model_size: 128,
            n_encoder_layers: 1,
            n_heads: 2,
            mlp_ratio: 4,
            final_representation: FinalRepresentation::Gap,
            dropout: 0.0,
            shared_continuous_mlp: false,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_size == 0 || self.n_encoder_layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config(
                "model size, encoder layers, and mlp ratio must be positive".into(),
            ));
        }
        if self.n_heads == 0 || self.model_size % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model size {} must be divisible by the head count {}",
                self.model_size, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_size / self.n_heads
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl EncoderLayerParams {
    fn init(e: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = ratio * e;
        let ones = |n: usize| Tensor::new(&[n], vec![1.0; n]).expect("static").trainable();
        let zeros = |n: usize| Tensor::zeros(&[n]).trainable();
        EncoderLayerParams {
            wq: linear_init(rng, &[e, e], e),
            bq: linear_init(rng, &[e], e),
            wk: linear_init(rng, &[e, e], e),
            bk: linear_init(rng, &[e], e),
            wv: linear_init(rng, &[e, e], e),
            bv: linear_init(rng, &[e], e),
            wo: linear_init(rng, &[e, e], e),
            bo: linear_init(rng, &[e], e),
            ln1_gain: ones(e),
            ln1_bias: zeros(e),
            ff_w1: linear_init(rng, &[e, hidden], e),
            ff_b1: linear_init(rng, &[hidden], e),
            ff_w2: linear_init(rng, &[hidden, e], hidden),
            ff_b2: linear_init(rng, &[e], hidden),
            ln2_gain: ones(e),
            ln2_bias: zeros(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceParams {
    pub cont: ContinuousEmbedderParams,
    pub check: CheckboxEmbedderParams,
    pub cat: CategoricalEmbedderParams,
    pub layers: Vec<EncoderLayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl TraceParams {
    /// Fresh parameters for `schema` under `config`. The draw order is
    /// fixed (embedders, then layers, then head) so a seed fully determines
    /// every tensor.
    pub fn init(schema: &FeatureSchema, config: &TraceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let e = config.model_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cont = ContinuousEmbedderParams::init(
            schema.n_continuous(),
            e,
            config.shared_continuous_mlp,
            &mut rng,
        );
        let options: Vec<usize> =
            (0..schema.n_checkbox()).map(|j| schema.checkbox_options(j)).collect();
        let check = CheckboxEmbedderParams::init(&options, e, &mut rng);
        let cards: Vec<usize> =
            (0..schema.n_categorical()).map(|j| schema.categorical_cardinality(j)).collect();
        let cat = CategoricalEmbedderParams::init(&cards, e, &mut rng);
        let layers = (0..config.n_encoder_layers)
            .map(|_| EncoderLayerParams::init(e, config.mlp_ratio, &mut rng))
            .collect();
        let head_w = linear_init(&mut rng, &[e, 1], e);
        let head_b = linear_init(&mut rng, &[1], e);
        Ok(TraceParams { cont, check, cat, layers, head_w, head_b })
    }

    /// Canonical (name, tensor) listing; the order matches [`Self::bind`]
    /// and is what the optimizer and checkpoints key on.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        embed_named(&self.cont, &self.check, &self.cat, &mut out);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut push = |field: &str, t| out.push((format!("layer{l}.{field}"), t));
            push("wq", &layer.wq);
            push("bq", &layer.bq);
            push("wk", &layer.wk);
            push("bk", &layer.bk);
            push("wv", &layer.wv);
            push("bv", &layer.bv);
            push("wo", &layer.wo);
            push("bo", &layer.bo);
            push("ln1.gain", &layer.ln1_gain);
            push("ln1.bias", &layer.ln1_bias);
            push("ff.w1", &layer.ff_w1);
            push("ff.b1", &layer.ff_b1);
            push("ff.w2", &layer.ff_w2);
            push("ff.b2", &layer.ff_b2);
            push("ln2.gain", &layer.ln2_gain);
            push("ln2.bias", &layer.ln2_bias);
        }
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        embed_named_mut(&mut self.cont, &mut self.check, &mut self.cat, &mut out);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let mut push = |field: &str, t| out.push((format!("layer{l}.{field}"), t));
            push("wq", &mut layer.wq);
            push("bq", &mut layer.bq);
            push("wk", &mut layer.wk);
            push("bk", &mut layer.bk);
            push("wv", &mut layer.wv);
            push("bv", &mut layer.bv);
            push("wo", &mut layer.wo);
            push("bo", &mut layer.bo);
            push("ln1.gain", &mut layer.ln1_gain);
            push("ln1.bias", &mut layer.ln1_bias);
            push("ff.w1", &mut layer.ff_w1);
            push("ff.b1", &mut layer.ff_b1);
            push("ff.w2", &mut layer.ff_w2);
            push("ff.b2", &mut layer.ff_b2);
            push("ln2.gain", &mut layer.ln2_gain);
            push("ln2.bias", &mut layer.ln2_bias);
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> TraceVars {
        let leaves: Vec<Var> = self
            .named()
            .into_iter()
            .map(|(name, t)| tape.named_leaf(t, name))
            .collect();
        self.vars_from_slice(&leaves).expect("bind order matches the named layout")
    }

    /// Assembles the var structure from leaves listed in [`Self::named`]
    /// order. Lets gradient checks substitute probe vars for parameters.
    pub fn vars_from_slice(&self, vars: &[Var]) -> Result<TraceVars> {
        let expected = self.named().len();
        if vars.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} parameter vars, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let cont_blocks = (0..self.cont.blocks.len())
            .map(|_| crate::embed::ContinuousBlockVars {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        let check_tables = (0..self.check.tables.len()).map(|_| next()).collect();
        let cat_tables = (0..self.cat.tables.len()).map(|_| next()).collect();
        let embed = EmbedVars {
            cont_blocks,
            cont_n_features: self.cont.n_features,
            check_tables,
            cat_tables,
        };
        let layers = (0..self.layers.len())
            .map(|_| EncoderLayerVars {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                ff_w1: next(),
                ff_b1: next(),
                ff_w2: next(),
                ff_b2: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            })
            .collect();
        Ok(TraceVars { embed, layers, head_w: next(), head_b: next() })
    }
}

pub struct EncoderLayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

pub struct TraceVars {
    pub embed: EmbedVars,
    pub layers: Vec<EncoderLayerVars>,
    pub head_w: Var,
    pub head_b: Var,
}

/// Post-softmax attention weights recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub batch: usize,
    pub heads: usize,
    pub n_tokens: usize,
    /// Row-major (batch, head, query, key).
    pub weights: Vec<f64>,
}

impl AttentionLayer {
    pub fn weight(&self, sample: usize, head: usize, query: usize, key: usize) -> f64 {
        let n = self.n_tokens;
        self.weights[((sample * self.heads + head) * n + query) * n + key]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionCapture {
    pub layers: Vec<AttentionLayer>,
}

/// Inverted-dropout state for one training step.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.p { 0.0 } else { 1.0 / keep })
            .collect();
        let m = tape.constant(&shape, mask)?;
        tape.mul(x, m)
    }
}

/// Scaled dot-product attention over all heads of one layer.
/// Returns the projected context and the post-softmax weights tensor
/// shaped (B·H, N, N).
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    layer: &EncoderLayerVars,
    n_heads: usize,
) -> Result<(Var, Var)> {
    let dims = tape.shape(x).to_vec();
    if dims.len() != 3 {
        return Err(Error::Contract(format!(
            "attention expects (B, N, E) tokens, got {dims:?}"
        )));
    }
    let (b, n, e) = (dims[0], dims[1], dims[2]);
    if e % n_heads != 0 {
        return Err(Error::Contract(format!(
            "width {e} not divisible by {n_heads} heads"
        )));
    }
    let dh = e / n_heads;

    let flat = tape.reshape(x, &[b * n, e])?;
    let mut project = |w: Var, bias: Var| -> Result<Var> {
        let p = tape.matmul(flat, w)?;
        let p = tape.add_row_bias(p, bias)?;
        let p4 = tape.reshape(p, &[b, n, n_heads, dh])?;
        let ph = tape.swap_axes_12(p4)?;
        tape.reshape(ph, &[b * n_heads, n, dh])
    };
    let q = project(layer.wq, layer.bq)?;
    let k = project(layer.wk, layer.bk)?;
    let v = project(layer.wv, layer.bv)?;

    let scores = tape.bmm(q, k, true)?;
    let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let att = tape.softmax_rows(scaled);

    let ctx = tape.bmm(att, v, false)?;
    let ctx4 = tape.reshape(ctx, &[b, n_heads, n, dh])?;
    let ctx_t = tape.swap_axes_12(ctx4)?;
    let ctx_flat = tape.reshape(ctx_t, &[b * n, e])?;
    let out = tape.matmul(ctx_flat, layer.wo)?;
    let out = tape.add_row_bias(out, layer.bo)?;
    let out = tape.reshape(out, &[b, n, e])?;
    Ok((out, att))
}

/// One post-norm encoder layer: LN(x + MHA(x)) then LN(· + FFN(·)).
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    layer: &EncoderLayerVars,
    n_heads: usize,
    dropout: &mut Option<Dropout<'_>>,
) -> Result<(Var, Var)> {
    let dims = tape.shape(x).to_vec();
    let (b, n, e) = (dims[0], dims[1], dims[2]);

    let (mha, att) = multi_head_attention(tape, x, layer, n_heads)?;
    let mha = match dropout {
        Some(d) => d.apply(tape, mha)?,
        None => mha,
    };
    let r1 = tape.add(x, mha)?;
    let h1 = tape.layer_norm(r1, layer.ln1_gain, layer.ln1_bias, LN_EPS)?;

    let flat = tape.reshape(h1, &[b * n, e])?;
    let f = tape.matmul(flat, layer.ff_w1)?;
    let f = tape.add_row_bias(f, layer.ff_b1)?;
    let f = tape.activation(f, Activation::Relu);
    let f = tape.matmul(f, layer.ff_w2)?;
    let f = tape.add_row_bias(f, layer.ff_b2)?;
    let f = tape.reshape(f, &[b, n, e])?;
    let f = match dropout {
        Some(d) => d.apply(tape, f)?,
        None => f,
    };
    let r2 = tape.add(h1, f)?;
    let h2 = tape.layer_norm(r2, layer.ln2_gain, layer.ln2_bias, LN_EPS)?;
    Ok((h2, att))
}

/// Full forward pass: batch -> logits shaped (B,).
///
/// `capture`, when given, receives every layer's post-softmax attention.
/// `dropout_rng` is only passed during training; inference uses `None`.
/// `config.dropout` of zero disables dropout even with an rng present.
pub fn trace_forward(
    tape: &mut Tape,
    batch: &Batch,
    vars: &TraceVars,
    config: &TraceConfig,
    mut capture: Option<&mut AttentionCapture>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let mut dropout = match dropout_rng {
        Some(rng) if config.dropout > 0.0 => Some(Dropout { rng, p: config.dropout }),
        _ => None,
    };
    let e = config.model_size;
    let b = batch.len();
    let mut x = embed_tokens(tape, batch, &vars.embed, e)?;
    let n = tape.shape(x)[1];
    for layer in &vars.layers {
        let (next, att) = encoder_layer(tape, x, layer, config.n_heads, &mut dropout)?;
        if let Some(cap) = capture.as_deref_mut() {
            cap.layers.push(AttentionLayer {
                batch: b,
                heads: config.n_heads,
                n_tokens: n,
                weights: tape.value(att).to_vec(),
            });
        }
        x = next;
    }
    let pooled = match config.final_representation {
        FinalRepresentation::Gap => tape.mean_tokens(x)?,
    };
    let logits = tape.matmul(pooled, vars.head_w)?;
    let logits = tape.add_row_bias(logits, vars.head_b)?;
    tape.reshape(logits, &[b])
}

/// Per-module parameter counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub parts: Vec<(String, usize)>,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.parts.iter().map(|(_, c)| c).sum()
    }
}

pub fn count_params(params: &TraceParams) -> ParamBreakdown {
    let mut parts = Vec::new();
    let cont: usize = params.cont.blocks.iter().map(|b| {
        b.w1.numel() + b.b1.numel() + b.w2.numel() + b.b2.numel()
    }).sum();
    parts.push(("continuous_embedder".to_string(), cont));
    let check: usize = params.check.tables.iter().map(Tensor::numel).sum();
    parts.push(("checkbox_embedder".to_string(), check));
    let cat: usize = params.cat.tables.iter().map(Tensor::numel).sum();
    parts.push(("categorical_embedder".to_string(), cat));
    for (l, layer) in params.layers.iter().enumerate() {
        let count = layer.wq.numel()
            + layer.bq.numel()
            + layer.wk.numel()
            + layer.bk.numel()
            + layer.wv.numel()
            + layer.bv.numel()
            + layer.wo.numel()
            + layer.bo.numel()
            + layer.ln1_gain.numel()
            + layer.ln1_bias.numel()
            + layer.ff_w1.numel()
            + layer.ff_b1.numel()
            + layer.ff_w2.numel()
            + layer.ff_b2.numel()
            + layer.ln2_gain.numel()
            + layer.ln2_bias.numel();
        parts.push((format!("encoder_layer_{l}"), count));
    }
    parts.push(("head".to_string(), params.head_w.numel() + params.head_b.numel()));
    ParamBreakdown { parts }
}
