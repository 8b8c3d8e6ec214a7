//! Encoder-decoder transformer with sparse encoder self-attention.
//!
//! Both stacks are post-norm: every sublayer output is added to its input and
//! then layer-normalized. Encoder self-attention follows a sliding window with
//! global positions; decoder self-attention is causal and dense; decoder
//! cross-attention sees every non-PAD encoder position.
//!
//! Forward passes record a [`ForwardTrace`], and [`Seq2Seq::backward`] turns a
//! trace into exact gradients for every array in [`ModelParams`].

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::pattern::AttentionPattern;
use crate::seed;
use crate::tensor::Matrix;

use attention::{AttentionCache, AttentionWeights, KeyMask, MultiHeadAttention};
use layers::{
    feed_forward, feed_forward_backward, layer_norm, layer_norm_backward, FeedForwardCache,
    LayerNormCache,
};
pub use params::ModelParams;
use params::{AttentionParams, DecoderLayerParams, EncoderLayerParams};

/// Order of the two attention sublayers in each decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderOrder {
    #[default]
    CrossThenSelf,
    SelfThenCross,
}

impl FromStr for DecoderOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_then_self" => Ok(DecoderOrder::CrossThenSelf),
            "self_then_cross" => Ok(DecoderOrder::SelfThenCross),
            other => Err(Error::validation(format!("unknown decoder order `{other}`"))),
        }
    }
}

impl fmt::Display for DecoderOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderOrder::CrossThenSelf => "cross_then_self",
            DecoderOrder::SelfThenCross => "self_then_cross",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    /// Sliding-window half-width in tokens on each side of a query.
    pub half_width: usize,
    pub dilation: usize,
    pub layernorm_epsilon: f64,
    pub decoder_order: DecoderOrder,
}

impl ModelConfig {
    /// Desk-scale default: 2 encoder and 2 decoder layers.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            d_ff: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_positions: 256,
            half_width: 4,
            dilation: 1,
            layernorm_epsilon: 1e-5,
            decoder_order: DecoderOrder::CrossThenSelf,
        }
    }

    /// Shape of the 6+6 layer "base" family.
    pub fn base(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            encoder_layers: 6,
            decoder_layers: 6,
            max_positions: 16384,
            half_width: 512,
            ..Self::toy(vocab_size)
        }
    }

    /// Shape of the 12+12 layer "large" family.
    pub fn large(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            encoder_layers: 12,
            decoder_layers: 12,
            ..Self::base(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return Err(Error::validation("model dimensions must be positive"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.dilation == 0 {
            return Err(Error::validation("dilation must be at least 1"));
        }
        if !(self.layernorm_epsilon > 0.0) {
            return Err(Error::validation("layernorm epsilon must be positive"));
        }
        Ok(())
    }
}

/// One teacher-forcing example: encoder input with its global positions and
/// the target word ids (without BOS/EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: TokenSeq,
    pub globals: Vec<usize>,
    pub target: TokenSeq,
}

impl Example {
    /// `[BOS] target..` and `target.. [EOS]`.
    pub fn decoder_io(&self) -> (Vec<usize>, Vec<usize>) {
        let mut dec_in = Vec::with_capacity(self.target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(self.target.as_slice());
        let mut labels = self.target.0.clone();
        labels.push(EOS);
        (dec_in, labels)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayerTrace {
    attn: AttentionCache,
    norm1: LayerNormCache,
    ffn: FeedForwardCache,
    norm2: LayerNormCache,
}

#[derive(Debug, Clone)]
struct DecoderLayerTrace {
    /// Attention caches in execution order.
    first: AttentionCache,
    second: AttentionCache,
    norm1: LayerNormCache,
    norm2: LayerNormCache,
    ffn: FeedForwardCache,
    norm3: LayerNormCache,
}

/// Activations of one forward pass, sufficient for [`Seq2Seq::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    source: Vec<usize>,
    decoder_input: Vec<usize>,
    encoder: Vec<EncoderLayerTrace>,
    decoder: Vec<DecoderLayerTrace>,
    decoder_hidden: Matrix,
    logits: Matrix,
    d_logits: Matrix,
    loss: f64,
}

impl ForwardTrace {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    /// Softmax weights of every attention sublayer (encoder first).
    pub fn attention_weights(&self) -> impl Iterator<Item = &AttentionWeights> {
        let enc = self.encoder.iter().map(|l| l.attn.weights());
        let dec = self
            .decoder
            .iter()
            .flat_map(|l| [l.first.weights(), l.second.weights()]);
        enc.chain(dec)
    }
}

/// Mean cross-entropy over non-PAD targets and its gradient with respect to
/// the logits.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::validation(format!(
            "{} targets for {} logit rows",
            targets.len(),
            logits.rows()
        )));
    }
    let count = targets.iter().filter(|&&t| t != PAD).count();
    if count == 0 {
        return Err(Error::validation("every target position is PAD"));
    }
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        if t >= logits.cols() {
            return Err(Error::validation(format!("target id {t} outside vocabulary")));
        }
        let lp = log_softmax(logits.row(r));
        total -= lp[t];
        for (g, l) in grad.row_mut(r).iter_mut().zip(&lp) {
            *g = l.exp() / count as f64;
        }
        grad.row_mut(r)[t] -= 1.0 / count as f64;
    }
    Ok((total / count as f64, grad))
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// A configured model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Seq2Seq { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::init(&config, &mut seed::rng(0));
        for ((name, a), (_, b)) in params.tensors().into_iter().zip(expected.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::validation(format!(
                    "array `{name}` has shape {:?}, config requires {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if params.tensors().len() != expected.tensors().len() {
            return Err(Error::validation("parameter layout does not match config"));
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::validation(format!("array `{name}` holds non-finite values")));
        }
        Ok(Seq2Seq { config, params })
    }

    fn check_tokens(&self, tokens: &[usize], what: &str) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::validation(format!("{what} is empty")));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::validation(format!(
                "{what} length {} exceeds max_positions {}",
                tokens.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::validation(format!(
                "{what} token {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[usize]) -> Matrix {
        let p = &self.params;
        let mut x = Matrix::zeros(tokens.len(), self.config.d_model);
        for (pos, &tok) in tokens.iter().enumerate() {
            let row = x.row_mut(pos);
            for ((o, &t), &q) in row
                .iter_mut()
                .zip(p.token_embedding.row(tok))
                .zip(p.position_embedding.row(pos))
            {
                *o = t + q;
            }
        }
        x
    }

    fn embed_backward(&self, tokens: &[usize], dx: &Matrix, grads: &mut ModelParams) {
        for (pos, &tok) in tokens.iter().enumerate() {
            let g = dx.row(pos);
            for (a, &v) in grads.token_embedding.row_mut(tok).iter_mut().zip(g) {
                *a += v;
            }
            for (a, &v) in grads.position_embedding.row_mut(pos).iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    fn attn<'a>(&self, p: &'a AttentionParams) -> MultiHeadAttention<'a> {
        MultiHeadAttention {
            params: p,
            n_heads: self.config.n_heads,
        }
    }

    /// Encoder self-attention pattern for an input of length `n`.
    pub fn encoder_pattern(&self, n: usize, globals: &[usize]) -> Result<AttentionPattern> {
        AttentionPattern::windowed(n, self.config.half_width, self.config.dilation, globals)
    }

    fn encode_traced(
        &self,
        input: &[usize],
        globals: &[usize],
    ) -> Result<(Matrix, Vec<EncoderLayerTrace>)> {
        self.check_tokens(input, "encoder input")?;
        let pattern = self.encoder_pattern(input.len(), globals)?;
        let mask = KeyMask::encoder(&pattern, input);
        let eps = self.config.layernorm_epsilon;
        let mut x = self.embed(input);
        let mut traces = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let (a, attn) = self.attn(&layer.self_attn).forward(&x, &x, mask.clone())?;
            let (y1, norm1) = layer_norm(&x.add(&a), &layer.norm1, eps);
            let (f, ffn) = feed_forward(&y1, &layer.ffn);
            let (y2, norm2) = layer_norm(&y1.add(&f), &layer.norm2, eps);
            traces.push(EncoderLayerTrace {
                attn,
                norm1,
                ffn,
                norm2,
            });
            x = y2;
        }
        Ok((x, traces))
    }

    /// Encoder hidden states `[n × d_model]`.
    pub fn encode(&self, input: &[usize], globals: &[usize]) -> Result<Matrix> {
        self.encode_traced(input, globals).map(|(h, _)| h)
    }

    fn decoder_sublayer(
        &self,
        layer: &DecoderLayerParams,
        cross: bool,
        x: &Matrix,
        encoded: &Matrix,
        source: &[usize],
    ) -> Result<(Matrix, AttentionCache)> {
        if cross {
            let mask = KeyMask::cross(x.rows(), source);
            self.attn(&layer.cross_attn).forward(x, encoded, mask)
        } else {
            self.attn(&layer.self_attn)
                .forward(x, x, KeyMask::causal(x.rows()))
        }
    }

    fn cross_first(&self) -> bool {
        self.config.decoder_order == DecoderOrder::CrossThenSelf
    }

    fn decode_traced(
        &self,
        encoded: &Matrix,
        source: &[usize],
        prefix: &[usize],
    ) -> Result<(Matrix, Matrix, Vec<DecoderLayerTrace>)> {
        self.check_tokens(prefix, "decoder prefix")?;
        if encoded.rows() != source.len() || encoded.cols() != self.config.d_model {
            return Err(Error::validation("encoder output does not match source tokens"));
        }
        let eps = self.config.layernorm_epsilon;
        let cross_first = self.cross_first();
        let mut x = self.embed(prefix);
        let mut traces = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (a, first) = self.decoder_sublayer(layer, cross_first, &x, encoded, source)?;
            let (y1, norm1) = layer_norm(&x.add(&a), &layer.norm1, eps);
            let (b, second) = self.decoder_sublayer(layer, !cross_first, &y1, encoded, source)?;
            let (y2, norm2) = layer_norm(&y1.add(&b), &layer.norm2, eps);
            let (f, ffn) = feed_forward(&y2, &layer.ffn);
            let (y3, norm3) = layer_norm(&y2.add(&f), &layer.norm3, eps);
            traces.push(DecoderLayerTrace {
                first,
                second,
                norm1,
                norm2,
                ffn,
                norm3,
            });
            x = y3;
        }
        let logits = x.matmul(&self.params.output_head);
        Ok((logits, x, traces))
    }

    /// Teacher-forced logits `[t × vocab_size]` for every prefix position.
    /// Row `i` depends only on `prefix[..=i]`.
    pub fn decode(&self, encoded: &Matrix, source: &[usize], prefix: &[usize]) -> Result<Matrix> {
        self.decode_traced(encoded, source, prefix).map(|(l, _, _)| l)
    }

    pub fn forward(&self, example: &Example) -> Result<ForwardTrace> {
        let source = example.input.as_slice();
        let (encoded, encoder) = self.encode_traced(source, &example.globals)?;
        let (decoder_input, labels) = example.decoder_io();
        let (logits, decoder_hidden, decoder) =
            self.decode_traced(&encoded, source, &decoder_input)?;
        let (loss, d_logits) = cross_entropy(&logits, &labels)?;
        Ok(ForwardTrace {
            source: source.to_vec(),
            decoder_input,
            encoder,
            decoder,
            decoder_hidden,
            logits,
            d_logits,
            loss,
        })
    }

    pub fn loss(&self, example: &Example) -> Result<f64> {
        self.forward(example).map(|t| t.loss)
    }

    /// Exact gradient of the trace's loss with respect to every parameter.
    pub fn backward(&self, trace: &ForwardTrace) -> ModelParams {
        let p = &self.params;
        let mut grads = p.zeros_like();
        trace
            .decoder_hidden
            .t_matmul_into(&trace.d_logits, &mut grads.output_head);
        let mut dx = trace.d_logits.matmul_t(&p.output_head);

        let n_src = trace.source.len();
        let mut d_encoded = Matrix::zeros(n_src, self.config.d_model);
        let cross_first = self.cross_first();
        for (idx, lt) in trace.decoder.iter().enumerate().rev() {
            let layer = &p.decoder[idx];
            let g = &mut grads.decoder[idx];
            let dr3 = layer_norm_backward(&lt.norm3, &layer.norm3, &dx, &mut g.norm3);
            let mut dy2 = dr3.clone();
            dy2.add_assign(&feed_forward_backward(&lt.ffn, &layer.ffn, &dr3, &mut g.ffn));
            let dr2 = layer_norm_backward(&lt.norm2, &layer.norm2, &dy2, &mut g.norm2);
            let mut dy1 = dr2.clone();
            dy1.add_assign(&self.decoder_sublayer_backward(
                layer,
                g,
                !cross_first,
                &lt.second,
                &dr2,
                &mut d_encoded,
            ));
            let dr1 = layer_norm_backward(&lt.norm1, &layer.norm1, &dy1, &mut g.norm1);
            let mut dx0 = dr1.clone();
            dx0.add_assign(&self.decoder_sublayer_backward(
                layer,
                g,
                cross_first,
                &lt.first,
                &dr1,
                &mut d_encoded,
            ));
            dx = dx0;
        }
        self.embed_backward(&trace.decoder_input, &dx, &mut grads);

        let mut dx = d_encoded;
        for (idx, lt) in trace.encoder.iter().enumerate().rev() {
            let layer = &p.encoder[idx];
            let g = &mut grads.encoder[idx];
            dx = self.encoder_layer_backward(layer, g, lt, &dx);
        }
        self.embed_backward(&trace.source, &dx, &mut grads);
        grads
    }

    fn encoder_layer_backward(
        &self,
        layer: &EncoderLayerParams,
        g: &mut EncoderLayerParams,
        lt: &EncoderLayerTrace,
        dy: &Matrix,
    ) -> Matrix {
        let dr2 = layer_norm_backward(&lt.norm2, &layer.norm2, dy, &mut g.norm2);
        let mut dy1 = dr2.clone();
        dy1.add_assign(&feed_forward_backward(&lt.ffn, &layer.ffn, &dr2, &mut g.ffn));
        let dr1 = layer_norm_backward(&lt.norm1, &layer.norm1, &dy1, &mut g.norm1);
        let (dq, dkv) = self
            .attn(&layer.self_attn)
            .backward(&lt.attn, &dr1, &mut g.self_attn);
        let mut dx = dr1;
        dx.add_assign(&dq);
        dx.add_assign(&dkv);
        dx
    }

    /// Gradient flowing into the sublayer's query input; the cross-attention
    /// key/value gradient goes to `d_encoded`.
    fn decoder_sublayer_backward(
        &self,
        layer: &DecoderLayerParams,
        g: &mut DecoderLayerParams,
        cross: bool,
        cache: &AttentionCache,
        d_out: &Matrix,
        d_encoded: &mut Matrix,
    ) -> Matrix {
        if cross {
            let (dq, dkv) = self
                .attn(&layer.cross_attn)
                .backward(cache, d_out, &mut g.cross_attn);
            d_encoded.add_assign(&dkv);
            dq
        } else {
            let (mut dq, dkv) = self
                .attn(&layer.self_attn)
                .backward(cache, d_out, &mut g.self_attn);
            dq.add_assign(&dkv);
            dq
        }
    }

    /// Loss and gradient for one example.
    pub fn loss_and_gradient(&self, example: &Example) -> Result<(f64, ModelParams)> {
        let trace = self.forward(example)?;
        let grads = self.backward(&trace);
        Ok((trace.loss, grads))
    }
}
