//! Learnable arrays and named traversal over them.

use rand::Rng;

use crate::tensor::Matrix;

use super::ModelConfig;

/// Uniform initialization bound for weight matrices and biases.
pub const INIT_BOUND: f64 = 0.08;

/// Walks every array in a fixed order with a dotted name.
pub trait Visit {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Visit for Matrix {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(prefix.to_string(), self)
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(prefix.to_string(), self)
    }
}

impl<T: Visit> Visit for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

macro_rules! impl_visit {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Visit for $ty {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
                $( self.$field.visit(&join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
                $( self.$field.visit_mut(&join(prefix, stringify!($field)), f); )*
            }
        }
    };
}

/// Query/key/value/output projections. The key projection has no bias: a
/// key bias shifts every score in a row equally and cancels in the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
}
impl_visit!(AttentionParams { wq, bq, wk, wv, bv, wo, bo });

impl AttentionParams {
    fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        AttentionParams {
            wq: Matrix::uniform(d, d, INIT_BOUND, rng),
            bq: Matrix::uniform(1, d, INIT_BOUND, rng),
            wk: Matrix::uniform(d, d, INIT_BOUND, rng),
            wv: Matrix::uniform(d, d, INIT_BOUND, rng),
            bv: Matrix::uniform(1, d, INIT_BOUND, rng),
            wo: Matrix::uniform(d, d, INIT_BOUND, rng),
            bo: Matrix::uniform(1, d, INIT_BOUND, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Matrix,
    pub bias: Matrix,
}
impl_visit!(LayerNormParams { gain, bias });

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        LayerNormParams {
            gain: Matrix::filled(1, d, 1.0),
            bias: Matrix::zeros(1, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w_in: Matrix,
    pub b_in: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}
impl_visit!(FeedForwardParams { w_in, b_in, w_out, b_out });

impl FeedForwardParams {
    fn init<R: Rng>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        FeedForwardParams {
            w_in: Matrix::uniform(d, d_ff, INIT_BOUND, rng),
            b_in: Matrix::uniform(1, d_ff, INIT_BOUND, rng),
            w_out: Matrix::uniform(d_ff, d, INIT_BOUND, rng),
            b_out: Matrix::uniform(1, d, INIT_BOUND, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm2: LayerNormParams,
}
impl_visit!(EncoderLayerParams { self_attn, norm1, ffn, norm2 });

/// `norm1`..`norm3` follow the sublayers in execution order, which depends
/// on [`super::DecoderOrder`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub cross_attn: AttentionParams,
    pub self_attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub norm2: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm3: LayerNormParams,
}
impl_visit!(DecoderLayerParams { cross_attn, self_attn, norm1, norm2, ffn, norm3 });

/// Every learnable array of the encoder-decoder. Token and position
/// embeddings are shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayerParams>,
    pub output_head: Matrix,
}
impl_visit!(ModelParams { token_embedding, position_embedding, encoder, decoder, output_head });

impl ModelParams {
    /// Weights and biases uniform in `[-0.08, 0.08]`; layer norms start as
    /// the identity.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let token_embedding = Matrix::uniform(cfg.vocab_size, d, INIT_BOUND, rng);
        let position_embedding = Matrix::uniform(cfg.max_positions, d, INIT_BOUND, rng);
        let encoder = (0..cfg.encoder_layers)
            .map(|_| EncoderLayerParams {
                self_attn: AttentionParams::init(d, rng),
                norm1: LayerNormParams::identity(d),
                ffn: FeedForwardParams::init(d, cfg.d_ff, rng),
                norm2: LayerNormParams::identity(d),
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|_| DecoderLayerParams {
                cross_attn: AttentionParams::init(d, rng),
                self_attn: AttentionParams::init(d, rng),
                norm1: LayerNormParams::identity(d),
                norm2: LayerNormParams::identity(d),
                ffn: FeedForwardParams::init(d, cfg.d_ff, rng),
                norm3: LayerNormParams::identity(d),
            })
            .collect();
        let output_head = Matrix::uniform(d, cfg.vocab_size, INIT_BOUND, rng);
        ModelParams {
            token_embedding,
            position_embedding,
            encoder,
            decoder,
            output_head,
        }
    }

    /// Named arrays in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, m| out.push((name, m)));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, m| m.data_mut().fill(0.0));
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// `self += factor * other`, array by array.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, m| m.scale(factor));
    }

    /// Name of the first array holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(name, _)| name)
    }
}
