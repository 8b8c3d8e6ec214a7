//! Oracles shared by the integration and acceptance tests. Everything here is
//! written independently of the library's fast paths.

#![allow(dead_code)]

use kwattn::corpus::{TokenSeq, BOS, TASK};
use kwattn::model::params::{AttentionParams, LayerNormParams};
use kwattn::model::{DecoderOrder, Example, ModelConfig, ModelParams, Seq2Seq};
use kwattn::Matrix;

/// Toy config used by the gradient checks.
pub fn grad_check_config(order: DecoderOrder) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_heads: 2,
        d_ff: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        max_positions: 8,
        half_width: 1,
        dilation: 1,
        layernorm_epsilon: 1e-5,
        decoder_order: order,
    }
}

/// Redraws every parameter uniformly within ±0.5 (gains around 1). Used
/// where the ±0.08 training init leaves the model too close to uniform.
pub fn widen(model: &mut Seq2Seq, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for (name, m) in model.params.tensors_mut() {
        let centre = if name.ends_with("gain") { 1.0 } else { 0.0 };
        for v in m.data_mut() {
            *v = centre + rng.random_range(-0.5..0.5);
        }
    }
}

/// Toy model with widened parameters. At the default ±0.08 the query/key
/// gradients are ~1e-8, the same order as central-difference roundoff.
pub fn grad_check_model(order: DecoderOrder, seed: u64) -> Seq2Seq {
    let mut model = Seq2Seq::new(grad_check_config(order), seed).unwrap();
    widen(&mut model, seed);
    model
}

pub fn grad_check_example() -> Example {
    Example {
        input: TokenSeq(vec![TASK, 7, 8, 9, 10, 6]),
        globals: vec![0, 1],
        target: TokenSeq(vec![9, 6, 10]),
    }
}

/// Per-group relative error `|a - n| / max(|a|, |n|)` between the analytic
/// gradient and central finite differences.
pub fn finite_difference_errors(model: &Seq2Seq, ex: &Example, eps: f64) -> Vec<(String, f64)> {
    let (_, analytic) = model.loss_and_gradient(ex).unwrap();
    let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (gi, name) in names.iter().enumerate() {
        let len = model.params.tensors()[gi].1.data().len();
        let mut numeric = vec![0.0; len];
        for k in 0..len {
            let mut plus = model.clone();
            plus.params.tensors_mut()[gi].1.data_mut()[k] += eps;
            let mut minus = model.clone();
            minus.params.tensors_mut()[gi].1.data_mut()[k] -= eps;
            numeric[k] = (plus.loss(ex).unwrap() - minus.loss(ex).unwrap()) / (2.0 * eps);
        }
        let a = analytic.tensors()[gi].1.data().to_vec();
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        out.push((name.clone(), rel));
    }
    out
}

fn lin(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            (0..w.cols())
                .map(|c| {
                    let mut s = b.map_or(0.0, |b| b.get(0, c));
                    for k in 0..x.cols() {
                        s += x.get(i, k) * w.get(k, c);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Dense attention: scores for all pairs, `-inf` added where `allowed` is
/// false, softmax over the full row.
pub fn dense_attention(
    p: &AttentionParams,
    n_heads: usize,
    xq: &Matrix,
    xkv: &Matrix,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Matrix {
    let q = lin(xq, &p.wq, Some(&p.bq));
    let k = lin(xkv, &p.wk, None);
    let v = lin(xkv, &p.wv, Some(&p.bv));
    let d = xq.cols();
    let dh = d / n_heads;
    let mut ctx = Matrix::zeros(xq.rows(), d);
    for h in 0..n_heads {
        for i in 0..xq.rows() {
            let scores: Vec<f64> = (0..xkv.rows())
                .map(|j| {
                    let mut s = 0.0;
                    for c in h * dh..(h + 1) * dh {
                        s += q[i][c] * k[j][c];
                    }
                    s / (dh as f64).sqrt() + if allowed(i, j) { 0.0 } else { f64::NEG_INFINITY }
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in h * dh..(h + 1) * dh {
                let mut acc = 0.0;
                for j in 0..xkv.rows() {
                    acc += exps[j] / z * v[j][c];
                }
                ctx.set(i, c, acc);
            }
        }
    }
    Matrix::from_rows(&lin(&ctx, &p.wo, Some(&p.bo)))
}

fn dense_layer_norm(x: &Matrix, p: &LayerNormParams, eps: f64) -> Matrix {
    let d = x.cols() as f64;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| {
            let r = x.row(i);
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            r.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + eps).sqrt() * p.gain.get(0, c) + p.bias.get(0, c))
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Reference encoder built from the dense masked attention above. The
/// allowed-pair rule is evaluated directly from window and global membership.
pub fn dense_encoder(
    params: &ModelParams,
    cfg: &ModelConfig,
    tokens: &[usize],
    globals: &[usize],
) -> Matrix {
    let h = cfg.half_width;
    let d = cfg.dilation;
    let allowed = |i: usize, j: usize| {
        let dist = i.abs_diff(j);
        globals.contains(&i) || globals.contains(&j) || (dist <= h * d && dist.is_multiple_of(d))
    };
    let rows: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(pos, &t)| {
            (0..cfg.d_model)
                .map(|c| params.token_embedding.get(t, c) + params.position_embedding.get(pos, c))
                .collect()
        })
        .collect();
    let mut x = Matrix::from_rows(&rows);
    for layer in &params.encoder {
        let a = dense_attention(&layer.self_attn, cfg.n_heads, &x, &x, &allowed);
        let y1 = dense_layer_norm(&x.add(&a), &layer.norm1, cfg.layernorm_epsilon);
        let mut hidden = Matrix::from_rows(&lin(&y1, &layer.ffn.w_in, Some(&layer.ffn.b_in)));
        for v in hidden.data_mut() {
            *v = gelu(*v);
        }
        let f = Matrix::from_rows(&lin(&hidden, &layer.ffn.w_out, Some(&layer.ffn.b_out)));
        x = dense_layer_norm(&y1.add(&f), &layer.norm2, cfg.layernorm_epsilon);
    }
    x
}

pub fn bos_prefix(rest: &[usize]) -> Vec<usize> {
    let mut v = vec![BOS];
    v.extend_from_slice(rest);
    v
}
